//! Shallow MLP mapping a summed feature vector to a signed distance.
//!
//! Parameters are stored flat, layer by layer: the row-major weight matrix
//! (`out x in`) followed by the bias vector. Hidden layers use the configured
//! activation, the scalar output layer is linear.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{MapError, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"IMAPMLP\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// No nonlinearity; mostly useful for checking the plumbing.
    Identity,
}

impl Activation {
    fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub input_len: usize,
    pub activation: Activation,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            hidden_width: 32,
            input_len: 8,
            activation: Activation::Relu,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.hidden_width == 0 || self.input_len == 0 {
            return Err(MapError::Argument(format!("degenerate MLP config {self:?}")));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_len;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden_width));
            fan_in = self.hidden_width;
        }
        dims.push((fan_in, 1));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

/// Per-thread scratch holding the activations of the last forward pass.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    // inputs[k] is the input of layer k; pre[k] its pre-activation
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub d_params: Vec<f64>,
    pub d_input: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpDecoder {
    config: MlpConfig,
    layers: Vec<Layer>,
    params: Vec<f64>,
    frozen: bool,
}

impl MlpDecoder {
    /// All-zero parameters.
    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut off = 0;
        for (fan_in, fan_out) in config.layer_dims() {
            layers.push(Layer {
                fan_in,
                fan_out,
                w: off,
                b: off + fan_in * fan_out,
            });
            off += fan_in * fan_out + fan_out;
        }
        Ok(Self {
            config,
            layers,
            params: vec![0.0; off],
            frozen: false,
        })
    }

    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn new<R: Rng + ?Sized>(config: MlpConfig, rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(config)?;
        for layer in mlp.layers.clone() {
            let bound = (6.0 / layer.fan_in as f64).sqrt();
            for w in &mut mlp.params[layer.w..layer.b] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    pub fn from_params(config: MlpConfig, params: Vec<f64>) -> Result<Self> {
        let mut mlp = Self::zeros(config)?;
        if params.len() != mlp.params.len() {
            return Err(MapError::Shape {
                expected: mlp.params.len(),
                got: params.len(),
            });
        }
        mlp.params = params;
        Ok(mlp)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Offset of the output-layer bias in the flat parameter view.
    pub fn output_bias_index(&self) -> usize {
        self.layers.last().map(|l| l.b).unwrap_or(0)
    }

    /// Weight `(row, col)` of layer `layer` in the flat parameter view.
    pub fn weight_index(&self, layer: usize, row: usize, col: usize) -> usize {
        let l = self.layers[layer];
        l.w + row * l.fan_in + col
    }

    pub fn bias_index(&self, layer: usize, row: usize) -> usize {
        self.layers[layer].b + row
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn check_len(&self, feature: &[f64]) -> Result<()> {
        if feature.len() != self.config.input_len {
            return Err(MapError::Shape {
                expected: self.config.input_len,
                got: feature.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, feature: &[f64]) -> Result<f64> {
        self.check_len(feature)?;
        Ok(self.forward_ws(feature, &mut Workspace::default()))
    }

    /// Forward pass that keeps what [`Self::backward_ws`] needs in `ws`.
    /// `feature` must have `input_len` entries.
    pub fn forward_ws(&self, feature: &[f64], ws: &mut Workspace) -> f64 {
        debug_assert_eq!(feature.len(), self.config.input_len);
        let n = self.layers.len();
        ws.inputs.resize_with(n, Vec::new);
        ws.pre.resize_with(n, Vec::new);
        ws.inputs[0].clear();
        ws.inputs[0].extend_from_slice(feature);
        for (k, layer) in self.layers.iter().enumerate() {
            let w = &self.params[layer.w..layer.b];
            let b = &self.params[layer.b..layer.b + layer.fan_out];
            let mut pre = std::mem::take(&mut ws.pre[k]);
            pre.clear();
            let input = &ws.inputs[k];
            for (row, bias) in w.chunks_exact(layer.fan_in).zip(b) {
                pre.push(bias + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>());
            }
            if k + 1 < n {
                let next = &mut ws.inputs[k + 1];
                next.clear();
                next.extend(pre.iter().map(|&z| self.activate(z)));
            }
            ws.pre[k] = pre;
        }
        ws.pre[n - 1][0]
    }

    #[inline]
    fn activate(&self, z: f64) -> f64 {
        match self.config.activation {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn activate_grad(&self, z: f64) -> f64 {
        match self.config.activation {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    /// Reverse pass for the last [`Self::forward_ws`] call. Gradients of
    /// `upstream * output` are added into `d_params` (when given) and `d_input`.
    pub fn backward_ws(&self, ws: &mut Workspace, upstream: f64, d_params: Option<&mut [f64]>, d_input: &mut [f64]) {
        let n = self.layers.len();
        let mut d_params = d_params;
        ws.delta.clear();
        ws.delta.push(upstream);
        for k in (0..n).rev() {
            let layer = self.layers[k];
            let input = &ws.inputs[k];
            if let Some(dp) = d_params.as_deref_mut() {
                for (o, &d) in ws.delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut dp[layer.w + o * layer.fan_in..layer.w + (o + 1) * layer.fan_in];
                    for (g, x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                    dp[layer.b + o] += d;
                }
            }
            ws.delta_next.clear();
            ws.delta_next.resize(layer.fan_in, 0.0);
            let w = &self.params[layer.w..layer.b];
            for (row, &d) in w.chunks_exact(layer.fan_in).zip(&ws.delta) {
                if d == 0.0 {
                    continue;
                }
                for (acc, a) in ws.delta_next.iter_mut().zip(row) {
                    *acc += d * a;
                }
            }
            if k > 0 {
                let pre = &ws.pre[k - 1];
                for (d, &z) in ws.delta_next.iter_mut().zip(pre) {
                    *d *= self.activate_grad(z);
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_next);
        }
        for (g, d) in d_input.iter_mut().zip(&ws.delta) {
            *g += d;
        }
    }

    pub fn backward(&self, feature: &[f64], upstream: f64) -> Result<GradientBundle> {
        self.check_len(feature)?;
        let mut ws = Workspace::default();
        self.forward_ws(feature, &mut ws);
        let mut d_params = vec![0.0; self.params.len()];
        let mut d_input = vec![0.0; feature.len()];
        self.backward_ws(&mut ws, upstream, Some(&mut d_params), &mut d_input);
        Ok(GradientBundle { d_params, d_input })
    }

    /// Model file layout (little-endian):
    ///
    /// ```text
    /// magic          [u8; 8]  b"IMAPMLP\0"
    /// version        u32      1
    /// hidden_layers  u32
    /// hidden_width   u32
    /// input_len      u32
    /// activation     u32      0 = relu, 1 = identity
    /// param_count    u64
    /// params         f64 x param_count
    /// ```
    pub fn write_to<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = ByteWriter::new(w);
        w.bytes(MODEL_MAGIC)?;
        w.u32(MODEL_VERSION)?;
        w.u32(self.config.hidden_layers as u32)?;
        w.u32(self.config.hidden_width as u32)?;
        w.u32(self.config.input_len as u32)?;
        w.u32(self.config.activation.code())?;
        w.u64(self.params.len() as u64)?;
        for p in &self.params {
            w.f64(*p)?;
        }
        w.finish()
    }

    pub fn read_from<R: Read>(r: R, path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(r, path);
        if &r.array::<8>()? != MODEL_MAGIC {
            return Err(MapError::format(path, "not a decoder model file (bad magic)"));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(MapError::format(path, format!("unsupported model version {version}")));
        }
        let hidden_layers = r.u32()? as usize;
        let hidden_width = r.u32()? as usize;
        let input_len = r.u32()? as usize;
        let code = r.u32()?;
        let activation = Activation::from_code(code)
            .ok_or_else(|| MapError::format(path, format!("unknown activation code {code}")))?;
        let config = MlpConfig {
            hidden_layers,
            hidden_width,
            input_len,
            activation,
        };
        config
            .validate()
            .map_err(|e| MapError::format(path, e.to_string()))?;
        let count = r.u64()? as usize;
        if count != config.param_count() {
            return Err(MapError::format(
                path,
                format!("parameter count {count} does not match config ({})", config.param_count()),
            ));
        }
        let params = r.f64_vec(count)?;
        r.expect_eof()?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(MapError::format(path, "non-finite parameter"));
        }
        Self::from_params(config, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| MapError::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| MapError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| MapError::io(path, e))?;
        Self::read_from(BufReader::new(file), path)
    }

    /// Loads a model and checks that it accepts features of length `input_len`.
    pub fn load_for(path: impl AsRef<Path>, input_len: usize) -> Result<Self> {
        let path = path.as_ref();
        let mlp = Self::load(path)?;
        if mlp.config.input_len != input_len {
            return Err(MapError::format(
                path,
                format!("model expects input length {}, field has {input_len}", mlp.config.input_len),
            ));
        }
        Ok(mlp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straightforward loop implementation kept apart from the workspace path.
    fn forward_oracle(mlp: &MlpDecoder, input: &[f64]) -> f64 {
        let cfg = mlp.config();
        let p = mlp.params();
        let mut off = 0;
        let mut x = input.to_vec();
        let mut fan_in = cfg.input_len;
        for layer in 0..=cfg.hidden_layers {
            let fan_out = if layer == cfg.hidden_layers { 1 } else { cfg.hidden_width };
            let mut y = vec![0.0; fan_out];
            for o in 0..fan_out {
                let mut acc = p[off + fan_in * fan_out + o];
                for i in 0..fan_in {
                    acc += p[off + o * fan_in + i] * x[i];
                }
                y[o] = if layer < cfg.hidden_layers && cfg.activation == Activation::Relu {
                    acc.max(0.0)
                } else {
                    acc
                };
            }
            off += fan_in * fan_out + fan_out;
            x = y;
            fan_in = fan_out;
        }
        x[0]
    }

    fn random_input(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_weights_return_bias() {
        let mut mlp = MlpDecoder::zeros(MlpConfig::default()).unwrap();
        let b = mlp.output_bias_index();
        mlp.params_mut()[b] = 0.75;
        assert_eq!(mlp.forward(&[0.3; 8]).unwrap(), 0.75);
        assert_eq!(mlp.forward(&[-9.0; 8]).unwrap(), 0.75);
    }

    #[test]
    fn linear_harness() {
        let cfg = MlpConfig {
            hidden_layers: 1,
            hidden_width: 1,
            input_len: 3,
            activation: Activation::Identity,
        };
        let w = [0.5, -2.0, 1.5];
        let mut params = w.to_vec();
        params.push(0.25); // hidden bias
        params.push(1.0); // output weight
        params.push(0.0); // output bias
        let mlp = MlpDecoder::from_params(cfg, params).unwrap();
        let f = [1.0, 2.0, 3.0];
        assert_eq!(mlp.forward(&f).unwrap(), 0.5 - 4.0 + 4.5 + 0.25);
        let g = mlp.backward(&f, 3.0).unwrap();
        assert_eq!(g.d_input, vec![1.5, -6.0, 4.5]);
        let g0 = mlp.backward(&f, 0.0).unwrap();
        assert!(g0.d_input.iter().chain(&g0.d_params).all(|v| *v == 0.0));
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for m in 1..4 {
            let cfg = MlpConfig {
                hidden_layers: m,
                hidden_width: 16,
                input_len: 8,
                activation: Activation::Relu,
            };
            for _ in 0..50 {
                let mut mlp = MlpDecoder::new(cfg, &mut rng).unwrap();
                for p in mlp.params_mut() {
                    *p += rng.random_range(-0.1..0.1);
                }
                let x = random_input(&mut rng, 8);
                let a = mlp.forward(&x).unwrap();
                let b = forward_oracle(&mlp, &x);
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn shape_errors() {
        let mlp = MlpDecoder::zeros(MlpConfig::default()).unwrap();
        assert!(matches!(mlp.forward(&[0.0; 7]), Err(MapError::Shape { expected: 8, got: 7 })));
        assert!(mlp.backward(&[0.0; 9], 1.0).is_err());
        assert!(MlpDecoder::from_params(MlpConfig::default(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        let mut draws = 0;
        while draws < 100 {
            let mut mlp = MlpDecoder::new(MlpConfig::default(), &mut rng).unwrap();
            for p in mlp.params_mut() {
                *p += rng.random_range(-0.1..0.1);
            }
            let x = random_input(&mut rng, 8);
            let upstream = rng.random_range(-2.0..2.0);
            let g = mlp.backward(&x, upstream).unwrap();
            // ReLU kinks within one step of a pre-activation make the FD estimate
            // meaningless; skip those draws rather than loosening the tolerance.
            let mut ws = Workspace::default();
            mlp.forward_ws(&x, &mut ws);
            if ws.pre.iter().flatten().any(|z| z.abs() < 1e-3) {
                continue;
            }
            draws += 1;
            for i in 0..mlp.param_count() {
                let mut plus = mlp.clone();
                plus.params_mut()[i] += h;
                let mut minus = mlp.clone();
                minus.params_mut()[i] -= h;
                let fd = upstream * (plus.forward(&x).unwrap() - minus.forward(&x).unwrap()) / (2.0 * h);
                let rel = (fd - g.d_params[i]).abs() / fd.abs().max(g.d_params[i].abs()).max(1e-6);
                worst = worst.max(rel);
            }
            for i in 0..8 {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = upstream * (mlp.forward(&xp).unwrap() - mlp.forward(&xm).unwrap()) / (2.0 * h);
                let rel = (fd - g.d_input[i]).abs() / fd.abs().max(g.d_input[i].abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn file_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mlp.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mlp = MlpDecoder::new(MlpConfig::default(), &mut rng).unwrap();
        mlp.save(&path).unwrap();
        let back = MlpDecoder::load(&path).unwrap();
        assert_eq!(back.params(), mlp.params());
        assert_eq!(back.config(), mlp.config());
        assert!(matches!(MlpDecoder::load_for(&path, 4), Err(MapError::Format { .. })));
        assert!(MlpDecoder::load_for(&path, 8).is_ok());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20] = 7; // input_len
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(MlpDecoder::load(&path), Err(MapError::Format { .. })));
        assert!(matches!(MlpDecoder::load(dir.path().join("missing")), Err(MapError::Io { .. })));
    }
}
