//! Lifted-model data types, prediction kernels for the linear and bilinear
//! modes, and model-file serialization.
//!
//! A model lifts the base state `x ∈ ℝⁿ` to `z = [x; ψ(x)] ∈ ℝᵖ`
//! (optionally with a trailing constant-1 channel) and advances it with
//!
//! * linear mode:   `ẑ⁺ = (A + ΔA)·z + (B + ΔB)·u`
//! * bilinear mode: `ẑ⁺ = (A + ΔA)·z + (B + ΔB)·(z ⊗ u)`
//!
//! The projection matrix `C = [Iₙ | 0]` is frozen, so the base state is
//! always the first `n` lifted coordinates.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Activation, Layer, Mlp};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KoopmanMode {
    Linear,
    Bilinear,
}

impl KoopmanMode {
    /// Column count of `B` for this mode.
    pub fn b_cols(self, lifted_dim: usize, input_dim: usize) -> usize {
        match self {
            KoopmanMode::Linear => input_dim,
            KoopmanMode::Bilinear => lifted_dim * input_dim,
        }
    }
}

/// Lifted linear/bilinear surrogate model.
#[derive(Debug, Clone)]
pub struct KoopmanModel {
    pub mode: KoopmanMode,
    /// Base-state dimension n.
    pub state_dim: usize,
    /// Input dimension m.
    pub input_dim: usize,
    /// Lifted dimension p.
    pub lifted_dim: usize,
    /// Learned observables ψ(x); `None` when p equals n plus the optional
    /// constant channel (identity lifting).
    pub lifting_net: Option<Mlp>,
    /// Append a constant-1 channel as the last lifted coordinate.
    pub constant_channel: bool,
    /// p×p transition matrix.
    pub a: DMatrix<f64>,
    /// p×m (linear) or p×(p·m) (bilinear) input matrix.
    pub b: DMatrix<f64>,
    /// n×p frozen projection `[Iₙ | 0]`.
    pub c: DMatrix<f64>,
}

/// Online corrections to the nominal matrices. Shapes mirror the parent
/// model; zero at initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationDelta {
    pub d_a: DMatrix<f64>,
    pub d_b: DMatrix<f64>,
}

impl AdaptationDelta {
    pub fn zeros(model: &KoopmanModel) -> Self {
        AdaptationDelta {
            d_a: DMatrix::zeros(model.a.nrows(), model.a.ncols()),
            d_b: DMatrix::zeros(model.b.nrows(), model.b.ncols()),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.d_a.iter().all(|&v| v == 0.0) && self.d_b.iter().all(|&v| v == 0.0)
    }
}

/// Row-major Kronecker product: entry `i·m + j` is `z_i · u_j`.
///
/// This fixes the column layout of bilinear `B`: column `i·m + j`
/// multiplies `z_i·u_j`.
pub fn kron(z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let m = u.len();
    DVector::from_fn(z.len() * m, |idx, _| z[idx / m] * u[idx % m])
}

fn frozen_projection(n: usize, p: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(n, p);
    for i in 0..n {
        c[(i, i)] = 1.0;
    }
    c
}

impl KoopmanModel {
    /// Assemble a model, deriving `C` and checking all shape invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mode: KoopmanMode,
        state_dim: usize,
        input_dim: usize,
        lifted_dim: usize,
        lifting_net: Option<Mlp>,
        constant_channel: bool,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
    ) -> Result<Self> {
        let model = KoopmanModel {
            mode,
            state_dim,
            input_dim,
            lifted_dim,
            lifting_net,
            constant_channel,
            a,
            b,
            c: frozen_projection(state_dim, lifted_dim),
        };
        model.validate()?;
        Ok(model)
    }

    /// Width the lifting network must produce.
    pub fn net_output_dim(&self) -> usize {
        self.lifted_dim - self.state_dim - usize::from(self.constant_channel)
    }

    pub fn validate(&self) -> Result<()> {
        let extra = usize::from(self.constant_channel);
        if self.lifted_dim < self.state_dim + extra {
            return Err(Error::config("lifted dimension too small for the layout"));
        }
        match &self.lifting_net {
            Some(net) => {
                if net.input_dim() != self.state_dim {
                    return Err(Error::config("lifting net input width must equal n"));
                }
                if net.output_dim() != self.net_output_dim() {
                    return Err(Error::config(format!(
                        "lifting net output width {} does not match the layout width {}",
                        net.output_dim(),
                        self.net_output_dim()
                    )));
                }
            }
            None => {
                if self.net_output_dim() != 0 {
                    return Err(Error::config(
                        "missing lifting net for a model with learned observables",
                    ));
                }
            }
        }
        if self.a.shape() != (self.lifted_dim, self.lifted_dim) {
            return Err(Error::config("A must be p×p"));
        }
        let b_cols = self.mode.b_cols(self.lifted_dim, self.input_dim);
        if self.b.shape() != (self.lifted_dim, b_cols) {
            return Err(Error::config(format!("B must be p×{b_cols} for this mode")));
        }
        if self.c != frozen_projection(self.state_dim, self.lifted_dim) {
            return Err(Error::config("C must equal [I | 0] exactly"));
        }
        let finite = self.a.iter().chain(self.b.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::numerical("model matrices contain non-finite values"));
        }
        Ok(())
    }

    /// Lift a base state: `z = [x; ψ(x); (1)]`.
    pub fn lift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "KoopmanModel::lift",
                expected: self.state_dim,
                actual: x.len(),
            });
        }
        let mut z = DVector::zeros(self.lifted_dim);
        z.rows_mut(0, self.state_dim).copy_from(x);
        if let Some(net) = &self.lifting_net {
            let psi = net.output(x)?;
            z.rows_mut(self.state_dim, psi.len()).copy_from(&psi);
        }
        if self.constant_channel {
            z[self.lifted_dim - 1] = 1.0;
        }
        Ok(z)
    }

    /// Batched lift; columns are samples.
    pub fn lift_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "KoopmanModel::lift_batch",
                expected: self.state_dim,
                actual: x.nrows(),
            });
        }
        let cols = x.ncols();
        let mut z = DMatrix::zeros(self.lifted_dim, cols);
        z.rows_mut(0, self.state_dim).copy_from(x);
        if let Some(net) = &self.lifting_net {
            let (psi, _) = net.forward(x)?;
            z.rows_mut(self.state_dim, psi.nrows()).copy_from(&psi);
        }
        if self.constant_channel {
            z.row_mut(self.lifted_dim - 1).fill(1.0);
        }
        Ok(z)
    }

    /// Regressor the input matrix multiplies: `u` (linear) or `z ⊗ u`
    /// (bilinear).
    pub fn input_regressor(&self, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match self.mode {
            KoopmanMode::Linear => u.clone(),
            KoopmanMode::Bilinear => kron(z, u),
        }
    }

    /// One-step lifted prediction, optionally with adaptation deltas.
    pub fn predict(
        &self,
        z: &DVector<f64>,
        u: &DVector<f64>,
        delta: Option<&AdaptationDelta>,
    ) -> Result<DVector<f64>> {
        if z.len() != self.lifted_dim {
            return Err(Error::DimensionMismatch {
                context: "KoopmanModel::predict lifted state",
                expected: self.lifted_dim,
                actual: z.len(),
            });
        }
        if u.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "KoopmanModel::predict input",
                expected: self.input_dim,
                actual: u.len(),
            });
        }
        let v = self.input_regressor(z, u);
        let mut next = &self.a * z + &self.b * &v;
        if let Some(d) = delta {
            if d.d_a.shape() != self.a.shape() || d.d_b.shape() != self.b.shape() {
                return Err(Error::config("adaptation delta shapes do not match model"));
            }
            next += &d.d_a * z + &d.d_b * &v;
        }
        Ok(next)
    }

    /// Project a lifted state back to the base state (first n entries,
    /// equal to `C·z` by the frozen structure of `C`).
    pub fn project(&self, z: &DVector<f64>) -> DVector<f64> {
        z.rows(0, self.state_dim).into_owned()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = ModelFile::from_model(self);
        let json = serde_json::to_string_pretty(&file)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let json = fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&json)?;
        file.into_model()
    }
}

/// On-disk model schema: row-major matrix arrays plus per-layer network
/// weights, guarded by a format version.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub mode: KoopmanMode,
    pub state_dim: usize,
    pub input_dim: usize,
    pub lifted_dim: usize,
    pub constant_channel: bool,
    pub a: MatrixData,
    pub b: MatrixData,
    pub c: MatrixData,
    pub lifting_net: Vec<LayerData>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl MatrixData {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        MatrixData {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::format(format!(
                "matrix payload holds {} entries for a {}×{} shape",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LayerData {
    pub weight: MatrixData,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl ModelFile {
    pub fn from_model(model: &KoopmanModel) -> Self {
        let lifting_net = model
            .lifting_net
            .as_ref()
            .map(|net| {
                net.layers()
                    .iter()
                    .map(|l| LayerData {
                        weight: MatrixData::from_matrix(&l.weight),
                        bias: l.bias.as_slice().to_vec(),
                        activation: l.activation,
                    })
                    .collect()
            })
            .unwrap_or_default();
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            mode: model.mode,
            state_dim: model.state_dim,
            input_dim: model.input_dim,
            lifted_dim: model.lifted_dim,
            constant_channel: model.constant_channel,
            a: MatrixData::from_matrix(&model.a),
            b: MatrixData::from_matrix(&model.b),
            c: MatrixData::from_matrix(&model.c),
            lifting_net,
        }
    }

    pub fn into_model(self) -> Result<KoopmanModel> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::SchemaVersion {
                expected: MODEL_FORMAT_VERSION,
                found: self.format_version,
            });
        }
        let net = if self.lifting_net.is_empty() {
            None
        } else {
            let layers = self
                .lifting_net
                .iter()
                .map(|l| {
                    Ok(Layer {
                        weight: l.weight.to_matrix()?,
                        bias: DVector::from_row_slice(&l.bias),
                        activation: l.activation,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(Mlp::from_layers(layers)?)
        };
        let model = KoopmanModel {
            mode: self.mode,
            state_dim: self.state_dim,
            input_dim: self.input_dim,
            lifted_dim: self.lifted_dim,
            lifting_net: net,
            constant_channel: self.constant_channel,
            a: self.a.to_matrix()?,
            b: self.b.to_matrix()?,
            c: self.c.to_matrix()?,
        };
        // The C-structure invariant is asserted on every load.
        model.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_model(
        mode: KoopmanMode,
        n: usize,
        m: usize,
        p: usize,
        constant_channel: bool,
        seed: u64,
    ) -> KoopmanModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = p - n - usize::from(constant_channel);
        let net = if psi > 0 {
            Some(
                Mlp::new(
                    &[n, 8, psi],
                    &[Activation::Tanh, Activation::Linear],
                    &mut rng,
                )
                .unwrap(),
            )
        } else {
            None
        };
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-0.5..0.5));
        let b_cols = mode.b_cols(p, m);
        let b = DMatrix::from_fn(p, b_cols, |_, _| rng.random_range(-0.5..0.5));
        KoopmanModel::new(mode, n, m, p, net, constant_channel, a, b).unwrap()
    }

    #[test]
    fn lift_embeds_state_in_leading_coordinates() {
        let model = random_model(KoopmanMode::Linear, 3, 1, 7, true, 1);
        let x = DVector::from_vec(vec![0.4, -1.1, 2.2]);
        let z = model.lift(&x).unwrap();
        assert_eq!(z.len(), 7);
        assert_eq!(model.project(&z), x);
        assert_eq!(z[6], 1.0);
        // project equals the dense product with C.
        let via_c = &model.c * &z;
        assert_relative_eq!(via_c, x, epsilon = 1e-15);
    }

    #[test]
    fn lift_with_zeroed_final_layer_appends_biases() {
        let mut model = random_model(KoopmanMode::Linear, 2, 1, 5, false, 3);
        let net = model.lifting_net.as_mut().unwrap();
        let mut layers = net.layers().to_vec();
        let last = layers.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias = DVector::from_vec(vec![0.3, -0.8, 0.1]);
        *net = Mlp::from_layers(layers).unwrap();

        let z = model.lift(&DVector::from_vec(vec![5.0, -2.0])).unwrap();
        // Final layer is linear with zero weights, so ψ(x) = bias.
        assert_relative_eq!(z[2], 0.3, epsilon = 1e-15);
        assert_relative_eq!(z[3], -0.8, epsilon = 1e-15);
        assert_relative_eq!(z[4], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn identity_transition_keeps_lifted_state() {
        let mut model = random_model(KoopmanMode::Linear, 3, 2, 6, false, 5);
        model.a = DMatrix::identity(6, 6);
        model.b = DMatrix::zeros(6, 2);
        let z = model.lift(&DVector::from_vec(vec![0.1, 0.2, 0.3])).unwrap();
        let next = model
            .predict(&z, &DVector::from_vec(vec![4.0, -2.0]), None)
            .unwrap();
        assert_relative_eq!(next, z, epsilon = 1e-15);
    }

    #[test]
    fn kron_matches_hand_evaluation_and_scalar_identity() {
        let z = DVector::from_vec(vec![1.0, 2.0]);
        let u = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(kron(&z, &u), DVector::from_vec(vec![3.0, 4.0, 6.0, 8.0]));
        // u = [1] collapses to z itself.
        let one = DVector::from_vec(vec![1.0]);
        assert_eq!(kron(&z, &one), z);
    }

    #[test]
    fn kron_is_bilinear_in_each_argument() {
        let z = DVector::from_vec(vec![0.5, -1.5, 2.0]);
        let u = DVector::from_vec(vec![1.25, -0.75]);
        let alpha = 3.5;
        assert_relative_eq!(
            kron(&z, &(&u * alpha)),
            kron(&z, &u) * alpha,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            kron(&(&z * alpha), &u),
            kron(&z, &u) * alpha,
            epsilon = 1e-15
        );
    }

    #[test]
    fn bilinear_prediction_with_unit_input_sums_a_and_b_action() {
        let model = random_model(KoopmanMode::Bilinear, 2, 1, 4, false, 8);
        let z = model.lift(&DVector::from_vec(vec![0.5, -0.25])).unwrap();
        let u = DVector::from_vec(vec![1.0]);
        let pred = model.predict(&z, &u, None).unwrap();
        let expected = &model.a * &z + &model.b * &z;
        assert_relative_eq!(pred, expected, epsilon = 1e-14);
    }

    #[test]
    fn prediction_with_delta_is_nominal_plus_delta_action() {
        for mode in [KoopmanMode::Linear, KoopmanMode::Bilinear] {
            let model = random_model(mode, 3, 2, 6, true, 13);
            let mut rng = ChaCha8Rng::seed_from_u64(14);
            let delta = AdaptationDelta {
                d_a: DMatrix::from_fn(6, 6, |_, _| rng.random_range(-0.1..0.1)),
                d_b: DMatrix::from_fn(6, model.b.ncols(), |_, _| rng.random_range(-0.1..0.1)),
            };
            let z = model
                .lift(&DVector::from_vec(vec![0.3, 0.1, -0.6]))
                .unwrap();
            let u = DVector::from_vec(vec![0.7, -1.2]);
            let with_delta = model.predict(&z, &u, Some(&delta)).unwrap();
            let nominal = model.predict(&z, &u, None).unwrap();
            let v = model.input_regressor(&z, &u);
            let extra = &delta.d_a * &z + &delta.d_b * &v;
            assert_relative_eq!(with_delta, nominal + extra, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_delta_prediction_is_bitwise_nominal() {
        let model = random_model(KoopmanMode::Linear, 3, 1, 6, true, 21);
        let delta = AdaptationDelta::zeros(&model);
        let z = model.lift(&DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        let u = DVector::from_vec(vec![-0.4]);
        let a = model.predict(&z, &u, None).unwrap();
        let b = model.predict(&z, &u, Some(&delta)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn linear_prediction_is_additive_in_state_and_input() {
        let model = random_model(KoopmanMode::Linear, 2, 2, 5, true, 33);
        let z1 = DVector::from_fn(5, |i, _| 0.1 * i as f64);
        let z2 = DVector::from_fn(5, |i, _| -0.2 * i as f64 + 0.05);
        let u1 = DVector::from_vec(vec![0.3, -0.6]);
        let u2 = DVector::from_vec(vec![-1.0, 0.4]);
        let sum = model.predict(&(&z1 + &z2), &(&u1 + &u2), None).unwrap();
        let parts = model.predict(&z1, &u1, None).unwrap() + model.predict(&z2, &u2, None).unwrap();
        assert_relative_eq!(sum, parts, epsilon = 1e-13);
    }

    #[test]
    fn save_load_round_trip_is_bitwise_lossless() {
        let model = random_model(KoopmanMode::Bilinear, 3, 2, 7, true, 42);
        let dir = std::env::temp_dir().join("adakoop-model-roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        model.save(&path).unwrap();
        let loaded = KoopmanModel::load(&path).unwrap();

        assert_eq!(loaded.a, model.a);
        assert_eq!(loaded.b, model.b);
        assert_eq!(loaded.c, model.c);
        let orig = model.lifting_net.as_ref().unwrap();
        let back = loaded.lifting_net.as_ref().unwrap();
        assert_eq!(orig.flat_params(), back.flat_params());

        // Spot-check one serialized entry against the in-memory value.
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let a01 = json["a"]["data"][1].as_f64().unwrap();
        assert_eq!(a01, model.a[(0, 1)]);
    }

    #[test]
    fn load_rejects_wrong_version_and_inconsistent_dims() {
        let model = random_model(KoopmanMode::Linear, 2, 1, 4, false, 77);
        let mut file = ModelFile::from_model(&model);
        file.format_version = 99;
        let dir = std::env::temp_dir().join("adakoop-model-bad");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad-version.json");
        std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        assert!(matches!(
            KoopmanModel::load(&path),
            Err(Error::SchemaVersion { found: 99, .. })
        ));

        let mut file = ModelFile::from_model(&model);
        file.lifted_dim = 9; // p disagrees with the stored matrices
        let path = dir.join("bad-dims.json");
        std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        assert!(KoopmanModel::load(&path).is_err());
    }

    #[test]
    fn corrupted_file_is_rejected() {
        let dir = std::env::temp_dir().join("adakoop-model-corrupt");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("garbage.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(KoopmanModel::load(&path).is_err());
    }
}
