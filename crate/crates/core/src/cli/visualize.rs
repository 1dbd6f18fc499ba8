//! SVG rendering of the primitives behind a layer's selected features.
//!
//! Every feature selected at the chosen layer starts with weight 1. Going
//! down one layer, a composite passes `beta_s` times its weight to parent
//! `s` and `beta_t` times to parent `t`; weights arriving by several paths
//! add up. The primitives reached at layer 1 are drawn as ellipses whose
//! opacity is their weight divided by the largest weight.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::compose::Provenance;
use crate::imageio::CANONICAL_SIDE;
use crate::model::{DeepBoostModel, ModelError};

/// Accumulated weight per layer-1 dimension for `layer` (1-based).
pub fn primitive_weights(
    model: &DeepBoostModel,
    layer: usize,
) -> Result<BTreeMap<usize, f64>, ModelError> {
    if layer == 0 || layer > model.num_layers() {
        return Err(ModelError::LayerOutOfRange {
            layer,
            layers: model.num_layers(),
        });
    }
    let selected: BTreeSet<usize> = model.layers[layer - 1]
        .classifier
        .stumps
        .iter()
        .map(|s| s.dim)
        .collect();
    let mut weights: BTreeMap<usize, f64> = selected.into_iter().map(|d| (d, 1.0)).collect();
    for l in (1..layer).rev() {
        let mut lower: BTreeMap<usize, f64> = BTreeMap::new();
        for (&j, &w) in &weights {
            match model.layers[l].candidates[j].provenance {
                Provenance::Composite {
                    s,
                    t,
                    beta_s,
                    beta_t,
                } => {
                    *lower.entry(s).or_default() += beta_s * w;
                    *lower.entry(t).or_default() += beta_t * w;
                }
                Provenance::Primitive(_) => {
                    return Err(ModelError::Inconsistent(format!(
                        "primitive candidate {j} above layer 1"
                    )))
                }
            }
        }
        weights = lower;
    }
    Ok(weights)
}

/// SVG document with one ellipse per reachable primitive.
pub fn render_svg(model: &DeepBoostModel, layer: usize, title: &str) -> Result<String, ModelError> {
    let weights = primitive_weights(model, layer)?;
    let max = weights.values().copied().fold(0.0f64, f64::max);
    let gabor = &model.config.gabor;
    // Elongated along the stripe direction, about one envelope scale long.
    let rx = gabor.sigma;
    let ry = (gabor.sigma / 4.0).max(0.5);
    let side = CANONICAL_SIDE;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{w}" viewBox="0 0 {side} {side}">"#,
        w = side * 4
    )
    .unwrap();
    writeln!(out, "  <title>{}</title>", escape(title)).unwrap();
    writeln!(
        out,
        r#"  <rect width="{side}" height="{side}" fill="white"/>"#
    )
    .unwrap();
    for (&d, &w) in &weights {
        let Provenance::Primitive(g) = model.layers[0].candidates[d].provenance else {
            return Err(ModelError::Inconsistent(format!(
                "layer-1 candidate {d} is not a primitive"
            )));
        };
        let degrees = gabor.angle(g.alpha as usize).to_degrees();
        let opacity = if max > 0.0 { w / max } else { 0.0 };
        writeln!(
            out,
            r#"  <ellipse cx="{cx}" cy="{cy}" rx="{rx}" ry="{ry}" transform="rotate({degrees:.4} {cx} {cy})" fill="black" fill-opacity="{opacity:.6}" data-feature="{d}" data-orientation="{a}" data-weight="{w}"/>"#,
            cx = g.w,
            cy = g.h,
            a = g.alpha,
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
