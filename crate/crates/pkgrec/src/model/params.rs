use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::streams;

use super::{ModelConfig, RecurrentCell, Variant};

pub const GATE_NAMES: [&str; 4] = ["i", "f", "g", "o"];

/// Recurrent cell weights, stored as four LSTM gates (input, forget,
/// candidate, output). The vanilla-tanh cell option uses only the candidate
/// slot; the others then simply never receive gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    /// Per gate: H×E input block.
    pub w_x: Vec<Tensor>,
    /// Per gate: H×H hidden block.
    pub w_h: Vec<Tensor>,
    /// Per gate: H bias.
    pub b: Vec<Tensor>,
}

/// Every trainable tensor in the model.
///
/// The field order here is the canonical parameter order: initialization
/// draws, optimizer slots, gradient extraction, and checkpoints all follow
/// it, so a fixed seed pins every tensor regardless of which wiring variant
/// is active.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    /// |I|×E package embeddings (layer-0 package representations).
    pub item_embed: Tensor,
    /// |U|×E static developer embeddings (long-term interests).
    pub dev_embed: Tensor,
    pub cell: CellParams,
    /// H×(H+E): fuses a friend's dynamic and static interests.
    pub w_friend: Tensor,
    /// Per layer: E×E dependency-side aggregation.
    pub w_dep: Vec<Tensor>,
    /// Per layer: H×H social-side aggregation.
    pub w_soc: Vec<Tensor>,
    /// E×2E: combines package layer-0 and layer-L representations.
    pub w_td: Tensor,
    /// E×2H: combines developer layer-0 and layer-L representations.
    pub w_ts: Tensor,
    /// E×H: developer output transform when the social side is disabled.
    pub w_t: Tensor,
}

impl ParameterSet {
    /// Fresh parameters, uniform in ±1/√fan_in per matrix, biases zero.
    /// Every tensor is always drawn, in canonical order, so the values do
    /// not depend on the active variant or budgets.
    pub fn init(config: &ModelConfig, num_items: usize, num_developers: usize, seed: u64) -> Self {
        let mut rng = streams::stream_rng(seed, streams::INIT);
        let (e, h, l) = (config.embed_dim, config.hidden_dim, config.layers);
        let mat = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            Tensor::uniform_init(vec![rows, cols], cols, rng)
        };

        let item_embed = mat(num_items, e, &mut rng);
        let dev_embed = mat(num_developers, e, &mut rng);
        let w_x = (0..4).map(|_| mat(h, e, &mut rng)).collect();
        let w_h = (0..4).map(|_| mat(h, h, &mut rng)).collect();
        let b = (0..4).map(|_| Tensor::zeros(vec![h])).collect();
        let w_friend = mat(h, h + e, &mut rng);
        let w_dep = (0..l).map(|_| mat(e, e, &mut rng)).collect();
        let w_soc = (0..l).map(|_| mat(h, h, &mut rng)).collect();
        let w_td = mat(e, 2 * e, &mut rng);
        let w_ts = mat(e, 2 * h, &mut rng);
        let w_t = mat(e, h, &mut rng);

        ParameterSet {
            item_embed,
            dev_embed,
            cell: CellParams { w_x, w_h, b },
            w_friend,
            w_dep,
            w_soc,
            w_td,
            w_ts,
            w_t,
        }
    }

    pub fn num_items(&self) -> usize {
        self.item_embed.rows()
    }

    pub fn num_developers(&self) -> usize {
        self.dev_embed.rows()
    }

    pub fn layers(&self) -> usize {
        self.w_dep.len()
    }

    /// (name, tensor) pairs in canonical order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.push(("item_embed".into(), &self.item_embed));
        out.push(("dev_embed".into(), &self.dev_embed));
        for (g, name) in GATE_NAMES.iter().enumerate() {
            out.push((format!("cell.w_x.{name}"), &self.cell.w_x[g]));
        }
        for (g, name) in GATE_NAMES.iter().enumerate() {
            out.push((format!("cell.w_h.{name}"), &self.cell.w_h[g]));
        }
        for (g, name) in GATE_NAMES.iter().enumerate() {
            out.push((format!("cell.b.{name}"), &self.cell.b[g]));
        }
        out.push(("w_friend".into(), &self.w_friend));
        for (i, t) in self.w_dep.iter().enumerate() {
            out.push((format!("w_dep.{}", i + 1), t));
        }
        for (i, t) in self.w_soc.iter().enumerate() {
            out.push((format!("w_soc.{}", i + 1), t));
        }
        out.push(("w_td".into(), &self.w_td));
        out.push(("w_ts".into(), &self.w_ts));
        out.push(("w_t".into(), &self.w_t));
        out
    }

    /// Mutable access in the same canonical order as [`ParameterSet::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.push(&mut self.item_embed);
        out.push(&mut self.dev_embed);
        out.extend(self.cell.w_x.iter_mut());
        out.extend(self.cell.w_h.iter_mut());
        out.extend(self.cell.b.iter_mut());
        out.push(&mut self.w_friend);
        out.extend(self.w_dep.iter_mut());
        out.extend(self.w_soc.iter_mut());
        out.push(&mut self.w_td);
        out.push(&mut self.w_ts);
        out.push(&mut self.w_t);
        out
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }
}

/// A trained (or initialized) model frozen to disk: config, variant, seed,
/// and every tensor. The text format round-trips f64 exactly (shortest
/// representation), so reloading reproduces evaluation bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub variant: Variant,
    pub seed: u64,
    pub params: ParameterSet,
}

const MAGIC: &str = "pkgrec-checkpoint v1";

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "seed {}", self.seed).unwrap();
        writeln!(out, "variant {}", self.variant.as_str()).unwrap();
        writeln!(out, "cell {}", c.cell.as_str()).unwrap();
        writeln!(out, "embed_dim {}", c.embed_dim).unwrap();
        writeln!(out, "hidden_dim {}", c.hidden_dim).unwrap();
        writeln!(out, "layers {}", c.layers).unwrap();
        writeln!(out, "social_budget {}", c.social_budget).unwrap();
        writeln!(out, "dependency_budget {}", c.dependency_budget).unwrap();
        writeln!(out, "dropout {}", c.dropout).unwrap();
        writeln!(out, "num_developers {}", self.params.num_developers()).unwrap();
        writeln!(out, "num_items {}", self.params.num_items()).unwrap();
        for (name, tensor) in self.params.named() {
            write!(out, "tensor {name}").unwrap();
            for d in tensor.shape() {
                write!(out, " {d}").unwrap();
            }
            out.push('\n');
            let mut first = true;
            for v in tensor.data() {
                if !first {
                    out.push(' ');
                }
                write!(out, "{v}").unwrap();
                first = false;
            }
            out.push('\n');
        }
        writeln!(out, "end").unwrap();
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Data(msg) => Error::data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_text(text: &str) -> Result<Checkpoint> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::data(format!("not a checkpoint (missing {MAGIC:?})")));
        }

        let mut header: Vec<(String, String)> = Vec::new();
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        let mut saw_end = false;
        while let Some(line) = lines.next() {
            if line == "end" {
                saw_end = true;
                break;
            }
            let (key, rest) = line
                .split_once(' ')
                .ok_or_else(|| Error::data(format!("bad checkpoint line {line:?}")))?;
            if key == "tensor" {
                let mut parts = rest.split(' ');
                let name = parts
                    .next()
                    .ok_or_else(|| Error::data("tensor line missing name"))?
                    .to_string();
                let shape: Vec<usize> = parts
                    .map(|p| {
                        p.parse()
                            .map_err(|_| Error::data(format!("bad dimension {p:?} for {name}")))
                    })
                    .collect::<Result<_>>()?;
                let values_line = lines
                    .next()
                    .ok_or_else(|| Error::data(format!("missing values for tensor {name}")))?;
                let data: Vec<f64> = values_line
                    .split(' ')
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse()
                            .map_err(|_| Error::data(format!("bad value {s:?} in tensor {name}")))
                    })
                    .collect::<Result<_>>()?;
                let expect: usize = shape.iter().product();
                if data.len() != expect {
                    return Err(Error::data(format!(
                        "tensor {name}: shape {shape:?} wants {expect} values, found {}",
                        data.len()
                    )));
                }
                tensors.push((name, Tensor::new(shape, data)));
            } else {
                header.push((key.to_string(), rest.to_string()));
            }
        }
        if !saw_end {
            return Err(Error::data("checkpoint truncated (no `end` marker)"));
        }

        let field = |key: &str| -> Result<&str> {
            header
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::data(format!("checkpoint missing field {key}")))
        };
        let num = |key: &str| -> Result<usize> {
            field(key)?
                .parse()
                .map_err(|_| Error::data(format!("bad integer for {key}")))
        };

        let config = ModelConfig {
            embed_dim: num("embed_dim")?,
            hidden_dim: num("hidden_dim")?,
            layers: num("layers")?,
            social_budget: num("social_budget")?,
            dependency_budget: num("dependency_budget")?,
            dropout: field("dropout")?
                .parse()
                .map_err(|_| Error::data("bad dropout value"))?,
            cell: RecurrentCell::parse(field("cell")?)
                .ok_or_else(|| Error::data("unknown cell kind"))?,
        };
        let variant_name = field("variant")?;
        let variant = Variant::parse(variant_name)
            .ok_or_else(|| Error::data(format!("unknown variant {variant_name:?}")))?;
        let seed: u64 = field("seed")?
            .parse()
            .map_err(|_| Error::data("bad seed"))?;
        let num_items = num("num_items")?;
        let num_developers = num("num_developers")?;

        // Rebuild the parameter set by matching the canonical name list.
        let reference = ParameterSet::init(&config, num_items, num_developers, 0);
        let expected: Vec<(String, Vec<usize>)> = reference
            .named()
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect();
        if tensors.len() != expected.len() {
            return Err(Error::data(format!(
                "checkpoint holds {} tensors, model wants {}",
                tensors.len(),
                expected.len()
            )));
        }
        let mut params = reference;
        {
            let mut slots = params.tensors_mut();
            for (i, ((name, tensor), (want_name, want_shape))) in
                tensors.into_iter().zip(expected).enumerate()
            {
                if name != want_name {
                    return Err(Error::data(format!(
                        "tensor {i} is {name}, expected {want_name}"
                    )));
                }
                if tensor.shape() != &want_shape[..] {
                    return Err(Error::Shape {
                        name,
                        expected: want_shape,
                        got: tensor.shape().to_vec(),
                    });
                }
                *slots[i] = tensor;
            }
        }

        Ok(Checkpoint {
            config,
            variant,
            seed,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 3,
            hidden_dim: 4,
            layers: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn shapes_follow_config() {
        let c = small_config();
        let p = ParameterSet::init(&c, 7, 5, 1);
        assert_eq!(p.item_embed.shape(), &[7, 3]);
        assert_eq!(p.dev_embed.shape(), &[5, 3]);
        for g in 0..4 {
            assert_eq!(p.cell.w_x[g].shape(), &[4, 3]);
            assert_eq!(p.cell.w_h[g].shape(), &[4, 4]);
            assert_eq!(p.cell.b[g].shape(), &[4]);
            assert!(p.cell.b[g].data().iter().all(|&v| v == 0.0));
        }
        assert_eq!(p.w_friend.shape(), &[4, 7]); // H x (H+E)
        assert_eq!(p.w_dep.len(), 2);
        assert_eq!(p.w_dep[0].shape(), &[3, 3]);
        assert_eq!(p.w_soc[1].shape(), &[4, 4]);
        assert_eq!(p.w_td.shape(), &[3, 6]);
        assert_eq!(p.w_ts.shape(), &[3, 8]);
        assert_eq!(p.w_t.shape(), &[3, 4]);
        assert!(p.all_finite());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let c = small_config();
        assert_eq!(
            ParameterSet::init(&c, 7, 5, 9),
            ParameterSet::init(&c, 7, 5, 9)
        );
        assert_ne!(
            ParameterSet::init(&c, 7, 5, 9),
            ParameterSet::init(&c, 7, 5, 10)
        );
    }

    #[test]
    fn init_magnitudes_respect_fan_in() {
        let c = small_config();
        let p = ParameterSet::init(&c, 7, 5, 3);
        let bound = 1.0 / (3.0f64).sqrt();
        assert!(p.item_embed.data().iter().all(|v| v.abs() <= bound));
        let bound_h = 1.0 / 2.0; // w_h fan-in = H = 4
        assert!(p.cell.w_h[0].data().iter().all(|v| v.abs() <= bound_h));
    }

    #[test]
    fn named_and_mut_views_agree() {
        let c = small_config();
        let mut p = ParameterSet::init(&c, 7, 5, 1);
        let names: Vec<String> = p.named().iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(names.len(), p.tensors_mut().len());
        assert_eq!(names[0], "item_embed");
        assert!(names.contains(&"cell.w_x.g".to_string()));
        assert!(names.contains(&"w_dep.2".to_string()));
        assert_eq!(names.last().unwrap(), "w_t");
        // Same tensors in the same order.
        let shapes_a: Vec<Vec<usize>> = p.named().iter().map(|(_, t)| t.shape().to_vec()).collect();
        let shapes_b: Vec<Vec<usize>> =
            p.tensors_mut().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes_a, shapes_b);
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let c = small_config();
        let ck = Checkpoint {
            config: c.clone(),
            variant: Variant::Full,
            seed: 123,
            params: ParameterSet::init(&c, 7, 5, 123),
        };
        let text = ck.to_text();
        let back = Checkpoint::from_text(&text).unwrap();
        assert_eq!(ck, back);
        // Byte-identical re-serialization.
        assert_eq!(text, back.to_text());
    }

    #[test]
    fn checkpoint_file_round_trips() {
        let c = small_config();
        let ck = Checkpoint {
            config: c.clone(),
            variant: Variant::DependencyOnly,
            seed: 5,
            params: ParameterSet::init(&c, 4, 3, 5),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let c = small_config();
        let ck = Checkpoint {
            config: c.clone(),
            variant: Variant::Full,
            seed: 1,
            params: ParameterSet::init(&c, 4, 3, 1),
        };
        let text = ck.to_text();
        assert!(Checkpoint::from_text(&text.replace("v1", "v9")).is_err());
        assert!(Checkpoint::from_text(text.trim_end_matches("end\n")).is_err());
        let wrong_shape = text.replace("tensor w_t 3 4", "tensor w_t 3 5");
        assert!(Checkpoint::from_text(&wrong_shape).is_err());
    }
}
