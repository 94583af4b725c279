use super::LayerShapes;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Text index of an exported model: `key value` lines followed by one
/// `matrix <name> <rows> <cols> <file>` line per matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub name: String,
    pub shapes: LayerShapes,
    pub seed: u64,
    pub matrices: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub file: String,
}

impl ManifestEntry {
    pub fn new(layer: usize, matrix: &str, rows: usize, cols: usize) -> Self {
        let name = format!("layer{layer}.{matrix}");
        ManifestEntry {
            file: format!("{name}.qmat"),
            name,
            rows,
            cols,
        }
    }
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut s = format!(
            "name {}\nd_model {}\nd_ff {}\nn_layers {}\nseed {}\n",
            self.name, self.shapes.d_model, self.shapes.d_ff, self.shapes.n_layers, self.seed
        );
        for m in &self.matrices {
            s += &format!("matrix {} {} {} {}\n", m.name, m.rows, m.cols, m.file);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::Format(format!("bad manifest line {line:?}"));
        let mut name = None;
        let mut dims = [None; 3];
        let mut seed = None;
        let mut matrices = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["name", v] => name = Some(v.to_string()),
                ["d_model", v] => dims[0] = Some(v.parse().map_err(|_| bad(line))?),
                ["d_ff", v] => dims[1] = Some(v.parse().map_err(|_| bad(line))?),
                ["n_layers", v] => dims[2] = Some(v.parse().map_err(|_| bad(line))?),
                ["seed", v] => seed = Some(v.parse().map_err(|_| bad(line))?),
                ["matrix", n, r, c, f] => matrices.push(ManifestEntry {
                    name: n.to_string(),
                    rows: r.parse().map_err(|_| bad(line))?,
                    cols: c.parse().map_err(|_| bad(line))?,
                    file: f.to_string(),
                }),
                _ => return Err(bad(line)),
            }
        }
        let missing = |k: &str| Error::Format(format!("manifest is missing {k}"));
        let shapes = LayerShapes::new(
            dims[0].ok_or_else(|| missing("d_model"))?,
            dims[1].ok_or_else(|| missing("d_ff"))?,
            dims[2].ok_or_else(|| missing("n_layers"))?,
        )?;
        Ok(Manifest {
            name: name.ok_or_else(|| missing("name"))?,
            shapes,
            seed: seed.ok_or_else(|| missing("seed"))?,
            matrices,
        })
    }
}
