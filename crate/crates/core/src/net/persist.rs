//! Weights persistence: a self-describing JSON document (`.pfw.json`) with a
//! format version, per-layer architecture fingerprint, and floats printed
//! with 17 significant digits so a save/load round trip is bit-exact.

use super::{Functional, NetError, Parameter, Result};
use crate::graph::{Graph, WeightStore};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct WeightsDoc {
    format_version: u32,
    name: String,
    layers: Vec<LayerDoc>,
    #[serde(default)]
    parameters: Vec<ParameterDoc>,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    functional: String,
    index: usize,
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    activation: String,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct ParameterDoc {
    name: String,
    value: f64,
    trainable: bool,
}

/// JSON formatter that prints every float with 17 significant digits.
struct F17Formatter;

impl serde_json::ser::Formatter for F17Formatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serialize any value as JSON with floats at 17 significant digits
/// (bit-faithful across a parse round trip).
pub fn write_json_f17<T: Serialize>(path: impl AsRef<Path>, value: &T) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut ser =
        serde_json::Serializer::with_formatter(std::io::BufWriter::new(file), F17Formatter);
    value
        .serialize(&mut ser)
        .map_err(|e| std::io::Error::other(e.to_string()))
}

/// Save the weights of the listed functionals and parameters.
pub fn save_weights(
    path: impl AsRef<Path>,
    name: &str,
    graph: &Graph,
    store: &WeightStore,
    functionals: &[&Functional],
    parameters: &[&Parameter],
) -> Result<()> {
    let mut layers = Vec::new();
    for f in functionals {
        for (i, layer) in f.layers().iter().enumerate() {
            let w = store.tensor(layer.w);
            let b = store.tensor(layer.b);
            if w.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
                return Err(NetError::Malformed(format!(
                    "non-finite weight in {}/layer {i}",
                    f.name()
                )));
            }
            layers.push(LayerDoc {
                functional: f.name().to_string(),
                index: i,
                w: w.outer_iter().map(|row| row.to_vec()).collect(),
                b: b.column(0).to_vec(),
                activation: layer
                    .activation
                    .map(|a| a.name().to_string())
                    .unwrap_or_else(|| "linear".to_string()),
                trainable: store.is_trainable(layer.w),
            });
        }
    }
    let parameters = parameters
        .iter()
        .map(|p| ParameterDoc {
            name: graph.weight_meta(p.id()).name.clone(),
            value: p.value(store),
            trainable: store.is_trainable(p.id()),
        })
        .collect();
    let doc = WeightsDoc {
        format_version: FORMAT_VERSION,
        name: name.to_string(),
        layers,
        parameters,
    };
    let file = std::fs::File::create(path)?;
    let mut ser = serde_json::Serializer::with_formatter(std::io::BufWriter::new(file), F17Formatter);
    doc.serialize(&mut ser)
        .map_err(|e| NetError::Malformed(e.to_string()))?;
    Ok(())
}

/// Load weights saved by [`save_weights`] back into the store, validating
/// the architecture fingerprint layer by layer.
pub fn load_weights(
    path: impl AsRef<Path>,
    graph: &Graph,
    store: &mut WeightStore,
    functionals: &[&Functional],
    parameters: &[&Parameter],
) -> Result<()> {
    let file = std::fs::File::open(path)?;
    let doc: WeightsDoc = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| NetError::Malformed(e.to_string()))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(NetError::FormatVersionMismatch {
            expected: FORMAT_VERSION,
            got: doc.format_version,
        });
    }
    for f in functionals {
        let mut saved: Vec<&LayerDoc> = doc
            .layers
            .iter()
            .filter(|l| l.functional == f.name())
            .collect();
        saved.sort_by_key(|l| l.index);
        if saved.len() != f.layers().len() {
            return Err(NetError::ShapeMismatch {
                location: format!("functional `{}`", f.name()),
                expected: format!("{} layers", f.layers().len()),
                got: format!("{} layers", saved.len()),
            });
        }
        for (i, (layer, ldoc)) in f.layers().iter().zip(&saved).enumerate() {
            let rows = ldoc.w.len();
            let cols = ldoc.w.first().map(|r| r.len()).unwrap_or(0);
            if ldoc.w.iter().any(|r| r.len() != cols) {
                return Err(NetError::Malformed(format!(
                    "ragged weight rows in `{}` layer {i}",
                    f.name()
                )));
            }
            let expected_act = layer
                .activation
                .map(|a| a.name().to_string())
                .unwrap_or_else(|| "linear".to_string());
            if rows != layer.d_out || cols != layer.d_in || ldoc.b.len() != layer.d_out {
                return Err(NetError::ShapeMismatch {
                    location: format!("{}/layer {i}", f.name()),
                    expected: format!("W {}x{}, b {}", layer.d_out, layer.d_in, layer.d_out),
                    got: format!("W {rows}x{cols}, b {}", ldoc.b.len()),
                });
            }
            if ldoc.activation != expected_act {
                return Err(NetError::ShapeMismatch {
                    location: format!("{}/layer {i}", f.name()),
                    expected: format!("activation {expected_act}"),
                    got: format!("activation {}", ldoc.activation),
                });
            }
        }
        for (layer, ldoc) in f.layers().iter().zip(&saved) {
            let flat: Vec<f64> = ldoc.w.iter().flatten().copied().collect();
            let w = Array2::from_shape_vec((layer.d_out, layer.d_in), flat)
                .expect("validated shape");
            let b = Array2::from_shape_vec((layer.d_out, 1), ldoc.b.clone())
                .expect("validated shape");
            store.set_tensor(layer.w, w)?;
            store.set_tensor(layer.b, b)?;
            store.set_trainable(layer.w, ldoc.trainable);
            store.set_trainable(layer.b, ldoc.trainable);
        }
    }
    for p in parameters {
        let name = &graph.weight_meta(p.id()).name;
        let pdoc = doc
            .parameters
            .iter()
            .find(|d| &d.name == name)
            .ok_or_else(|| NetError::Malformed(format!("parameter `{name}` not in file")))?;
        store.set_scalar(p.id(), pdoc.value);
        store.set_trainable(p.id(), pdoc.trainable);
    }
    Ok(())
}
