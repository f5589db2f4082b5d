use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::config::AstnConfig;
use super::params::{fan_in_uniform, seeded_rng, Bound, ParamStore, Partition};
use crate::autograd::{Scalar, Tape, Tensor, Var};
use crate::data::PressureSequence;
use crate::error::{AstnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: usize,
    pub bias: usize,
}

/// Parameter indices of one recurrent direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruParams {
    pub w_xz: usize,
    pub w_hz: usize,
    pub w_xr: usize,
    pub w_hr: usize,
    pub w_xh: usize,
    pub w_hh: usize,
    pub b_z: usize,
    pub b_r: usize,
    pub b_h: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub spatial_conv: Vec<Dense>,
    pub spatial_fc: Dense,
    pub intrinsic_conv: Vec<Dense>,
    pub intrinsic_fc: Dense,
    pub gru: Vec<GruParams>,
    pub classifier: Vec<Dense>,
    pub discriminator: Dense,
}

/// Tape handles for one trial's representations and predictions.
#[derive(Debug, Clone, Copy)]
pub struct TrialVars {
    pub seconds: usize,
    /// Per-frame spatial representation, `[T·P, S]`.
    pub spatial: Var,
    /// Per-second intrinsic representation, `[T, H1]`.
    pub intrinsic: Var,
    /// Per-second dynamic representation, `[T, H2]` or `[T, 2·H2]`.
    pub dynamic: Var,
    /// Per-second FoG probabilities, `[T]`.
    pub prob: Var,
}

/// Plain copies of one trial's forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutput {
    pub seconds: usize,
    pub spatial: Vec<f64>,
    pub intrinsic: Vec<f64>,
    pub dynamic: Vec<f64>,
    pub prob: Vec<f64>,
}

/// Network parameters plus the configuration they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Astn<F: Scalar> {
    pub config: AstnConfig,
    pub params: ParamStore<F>,
    pub layout: Layout,
}

const LEAKY_GAIN: f64 = std::f64::consts::SQRT_2;

fn dense<F: Scalar>(
    store: &mut ParamStore<F>,
    rng: &mut ChaCha8Rng,
    name: &str,
    part: Partition,
    weight_shape: &[usize],
    fan_in: usize,
    gain: f64,
) -> Dense {
    let weight = store.push(format!("{name}.weight"), part, fan_in_uniform(weight_shape, fan_in, gain, rng));
    let bias = store.push(format!("{name}.bias"), part, Tensor::zeros(&[weight_shape[0]]));
    Dense { weight, bias }
}

fn gru_params<F: Scalar>(store: &mut ParamStore<F>, rng: &mut ChaCha8Rng, name: &str, h1: usize, h2: usize) -> GruParams {
    let g = Partition::Generator;
    let mut w = |n: &str, cols: usize| store.push(format!("{name}.{n}"), g, fan_in_uniform(&[h2, cols], cols, 1.0, rng));
    let (w_xz, w_hz, w_xr, w_hr, w_xh, w_hh) = (
        w("w_xz", h1),
        w("w_hz", h2),
        w("w_xr", h1),
        w("w_hr", h2),
        w("w_xh", h1),
        w("w_hh", h2),
    );
    let mut b = |n: &str| store.push(format!("{name}.{n}"), g, Tensor::zeros(&[h2]));
    GruParams {
        w_xz,
        w_hz,
        w_xr,
        w_hr,
        w_xh,
        w_hh,
        b_z: b("b_z"),
        b_r: b("b_r"),
        b_h: b("b_h"),
    }
}

impl<F: Scalar> Astn<F> {
    /// Builds a network with seeded fan-in uniform weights and zero biases.
    pub fn new(config: AstnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let g = Partition::Generator;

        let mut spatial_conv = Vec::new();
        let mut in_ch = 1;
        for (i, l) in config.spatial_layers.iter().enumerate() {
            let shape = [l.channels, in_ch, l.kernel, l.kernel];
            spatial_conv.push(dense(&mut store, &mut rng, &format!("spatial.conv{i}"), g, &shape, in_ch * l.kernel * l.kernel, LEAKY_GAIN));
            in_ch = l.channels;
        }
        let flat = config.spatial_flat_dim()?;
        let spatial_fc = dense(&mut store, &mut rng, "spatial.fc", g, &[config.spatial_dim, flat], flat, LEAKY_GAIN);

        let mut intrinsic_conv = Vec::new();
        let mut in_ch = config.spatial_dim;
        for (i, l) in config.intrinsic_layers.iter().enumerate() {
            let shape = [l.channels, in_ch, l.kernel];
            intrinsic_conv.push(dense(&mut store, &mut rng, &format!("intrinsic.conv{i}"), g, &shape, in_ch * l.kernel, LEAKY_GAIN));
            in_ch = l.channels;
        }
        let flat = config.intrinsic_flat_dim()?;
        let intrinsic_fc = dense(&mut store, &mut rng, "intrinsic.fc", g, &[config.intrinsic_dim, flat], flat, LEAKY_GAIN);

        let mut gru = vec![gru_params(&mut store, &mut rng, "gru.forward", config.intrinsic_dim, config.hidden_dim)];
        if config.bidirectional {
            gru.push(gru_params(&mut store, &mut rng, "gru.backward", config.intrinsic_dim, config.hidden_dim));
        }

        let mut classifier = Vec::new();
        let mut width = config.dynamic_dim();
        for (i, &h) in config.classifier_hidden.iter().enumerate() {
            classifier.push(dense(&mut store, &mut rng, &format!("classifier.fc{i}"), Partition::Classifier, &[h, width], width, LEAKY_GAIN));
            width = h;
        }
        classifier.push(dense(&mut store, &mut rng, "classifier.out", Partition::Classifier, &[1, width], width, 1.0));

        let d_in = config.discriminator_input_dim();
        let discriminator = dense(&mut store, &mut rng, "discriminator.fc", Partition::Discriminator, &[1, d_in], d_in, 1.0);

        Ok(Astn {
            config,
            params: store,
            layout: Layout {
                spatial_conv,
                spatial_fc,
                intrinsic_conv,
                intrinsic_fc,
                gru,
                classifier,
                discriminator,
            },
        })
    }

    fn slope(&self) -> F {
        F::from_f64(self.config.leaky_slope)
    }

    fn linear(&self, tape: &mut Tape<F>, b: &Bound, x: Var, d: Dense) -> Result<Var> {
        let y = tape.matmul_bt(x, b.var(d.weight))?;
        tape.add_row_bias(y, b.var(d.bias))
    }

    /// Frames of a sequence as a `[T·P, 1, W, H]` constant.
    pub fn frames_input(&self, tape: &mut Tape<F>, seq: &PressureSequence) -> Result<Var> {
        let c = &self.config;
        if (seq.width, seq.height, seq.sample_rate) != (c.width, c.height, c.sample_rate) {
            return Err(AstnError::shape(
                "input",
                format!(
                    "{}: {}×{}@{} Hz but model expects {}×{}@{} Hz",
                    seq.id, seq.width, seq.height, seq.sample_rate, c.width, c.height, c.sample_rate
                ),
            ));
        }
        let data = seq.frames().iter().map(|&v| F::from_f64(v as f64)).collect();
        Ok(tape.constant(Tensor::new(&[seq.frame_count(), 1, c.width, c.height], data)?))
    }

    /// Frame-wise conv stack and projection: `[N,1,W,H] -> [N,S]`.
    pub fn spatial_encode(&self, tape: &mut Tape<F>, b: &Bound, frames: Var) -> Result<Var> {
        let n = tape.shape(frames)[0];
        let mut x = frames;
        for (spec, d) in self.config.spatial_layers.iter().zip(&self.layout.spatial_conv) {
            x = tape.conv2d(x, b.var(d.weight), 1, spec.kernel / 2)?;
            x = tape.add_channel_bias(x, b.var(d.bias), true)?;
            x = tape.leaky_relu(x, self.slope());
            if spec.pool > 1 {
                x = tape.max_pool2d(x, spec.pool)?;
            }
        }
        let flat = tape.value(x).len() / n;
        let x = tape.reshape(x, &[n, flat])?;
        let y = self.linear(tape, b, x, self.layout.spatial_fc)?;
        Ok(tape.leaky_relu(y, self.slope()))
    }

    /// Per-second temporal conv stack over the `P` frame features:
    /// `[T·P, S] -> [T, H1]`.
    pub fn intrinsic_encode(&self, tape: &mut Tape<F>, b: &Bound, spatial: Var) -> Result<Var> {
        let (p, s) = (self.config.sample_rate, self.config.spatial_dim);
        let rows = tape.shape(spatial)[0];
        if rows % p != 0 || tape.shape(spatial)[1] != s {
            return Err(AstnError::shape(
                "intrinsic_encode",
                format!("{:?} is not whole seconds of {p}×{s}", tape.shape(spatial)),
            ));
        }
        let t = rows / p;
        let x = tape.reshape(spatial, &[t, p, s])?;
        let mut x = tape.permute_021(x)?;
        for (spec, d) in self.config.intrinsic_layers.iter().zip(&self.layout.intrinsic_conv) {
            x = tape.conv1d(x, b.var(d.weight), 1, spec.kernel / 2)?;
            x = tape.add_channel_bias(x, b.var(d.bias), true)?;
            x = tape.leaky_relu(x, self.slope());
            if spec.pool > 1 {
                x = tape.max_pool1d(x, spec.pool)?;
            }
        }
        let flat = tape.value(x).len() / t;
        let x = tape.reshape(x, &[t, flat])?;
        let y = self.linear(tape, b, x, self.layout.intrinsic_fc)?;
        Ok(tape.leaky_relu(y, self.slope()))
    }

    /// One gated recurrent update. `x_z`, `x_r`, `x_h` are the input
    /// projections `W_x· x + b` for this step (`[1, H2]`), `prev` is `[1, H2]`.
    fn gru_update(&self, tape: &mut Tape<F>, b: &Bound, g: GruParams, xs: [Var; 3], prev: Var) -> Result<Var> {
        let [x_z, x_r, x_h] = xs;
        let hz = tape.matmul_bt(prev, b.var(g.w_hz))?;
        let z = tape.add(x_z, hz)?;
        let z = tape.sigmoid(z);
        let hr = tape.matmul_bt(prev, b.var(g.w_hr))?;
        let r = tape.add(x_r, hr)?;
        let r = tape.sigmoid(r);
        let hh = tape.matmul_bt(prev, b.var(g.w_hh))?;
        let gated = tape.mul(r, hh)?;
        let cand = tape.add(x_h, gated)?;
        let cand = tape.tanh(cand);
        let keep_new = tape.one_minus(z);
        let a = tape.mul(keep_new, cand)?;
        let c = tape.mul(z, prev)?;
        tape.add(a, c)
    }

    /// Single step from `x: [1, H1]` and `prev: [1, H2]` using direction `dir`.
    pub fn gru_step(&self, tape: &mut Tape<F>, b: &Bound, dir: usize, x: Var, prev: Var) -> Result<Var> {
        let g = self.layout.gru[dir];
        let xz = tape.matmul_bt(x, b.var(g.w_xz))?;
        let xz = tape.add_row_bias(xz, b.var(g.b_z))?;
        let xr = tape.matmul_bt(x, b.var(g.w_xr))?;
        let xr = tape.add_row_bias(xr, b.var(g.b_r))?;
        let xh = tape.matmul_bt(x, b.var(g.w_xh))?;
        let xh = tape.add_row_bias(xh, b.var(g.b_h))?;
        self.gru_update(tape, b, g, [xz, xr, xh], prev)
    }

    /// Runs direction `dir` over `x: [T, H1]` from a zero state, `[T, H2]`.
    fn gru_run(&self, tape: &mut Tape<F>, b: &Bound, dir: usize, x: Var) -> Result<Var> {
        let g = self.layout.gru[dir];
        let t = tape.shape(x)[0];
        let proj = |w: usize, bias: usize, tape: &mut Tape<F>| -> Result<Var> {
            let y = tape.matmul_bt(x, b.var(w))?;
            tape.add_row_bias(y, b.var(bias))
        };
        let xz = proj(g.w_xz, g.b_z, tape)?;
        let xr = proj(g.w_xr, g.b_r, tape)?;
        let xh = proj(g.w_xh, g.b_h, tape)?;
        let mut h = tape.constant(Tensor::zeros(&[1, self.config.hidden_dim]));
        let mut outs = Vec::with_capacity(t);
        for step in 0..t {
            let xs = [
                tape.slice_rows(xz, step, 1)?,
                tape.slice_rows(xr, step, 1)?,
                tape.slice_rows(xh, step, 1)?,
            ];
            h = self.gru_update(tape, b, g, xs, h)?;
            outs.push(h);
        }
        tape.stack_rows(&outs)
    }

    /// Dynamic representation `[T, H2]`, or `[T, 2·H2]` as
    /// `[forward_t ; backward_t]` when bidirectional.
    pub fn gru_sequence(&self, tape: &mut Tape<F>, b: &Bound, intrinsic: Var) -> Result<Var> {
        if tape.shape(intrinsic).len() != 2 || tape.shape(intrinsic)[1] != self.config.intrinsic_dim {
            return Err(AstnError::shape(
                "gru_sequence",
                format!("{:?} vs intrinsic dim {}", tape.shape(intrinsic), self.config.intrinsic_dim),
            ));
        }
        let fwd = self.gru_run(tape, b, 0, intrinsic)?;
        if !self.config.bidirectional {
            return Ok(fwd);
        }
        let rev = tape.reverse_rows(intrinsic)?;
        let bwd = self.gru_run(tape, b, 1, rev)?;
        let bwd = tape.reverse_rows(bwd)?;
        tape.concat_cols(&[fwd, bwd])
    }

    /// Per-second probabilities `[T]` from the dynamic representation.
    pub fn classify(&self, tape: &mut Tape<F>, b: &Bound, dynamic: Var) -> Result<Var> {
        let t = tape.shape(dynamic)[0];
        let mut x = dynamic;
        let (hidden, out) = self.layout.classifier.split_at(self.layout.classifier.len() - 1);
        for &d in hidden {
            x = self.linear(tape, b, x, d)?;
            x = tape.leaky_relu(x, self.slope());
        }
        let logits = self.linear(tape, b, x, out[0])?;
        let p = tape.sigmoid(logits);
        tape.reshape(p, &[t])
    }

    /// Full forward pass of one trial.
    pub fn forward(&self, tape: &mut Tape<F>, b: &Bound, seq: &PressureSequence) -> Result<TrialVars> {
        let frames = self.frames_input(tape, seq)?;
        let spatial = self.spatial_encode(tape, b, frames)?;
        let intrinsic = self.intrinsic_encode(tape, b, spatial)?;
        let dynamic = self.gru_sequence(tape, b, intrinsic)?;
        let prob = self.classify(tape, b, dynamic)?;
        Ok(TrialVars {
            seconds: seq.seconds(),
            spatial,
            intrinsic,
            dynamic,
            prob,
        })
    }

    /// Forward pass with every parameter constant.
    pub fn infer(&self, seq: &PressureSequence) -> Result<TrialOutput> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, &[]);
        let v = self.forward(&mut tape, &b, seq)?;
        Ok(TrialOutput {
            seconds: v.seconds,
            spatial: tape.value(v.spatial).to_f64_vec(),
            intrinsic: tape.value(v.intrinsic).to_f64_vec(),
            dynamic: tape.value(v.dynamic).to_f64_vec(),
            prob: tape.value(v.prob).to_f64_vec(),
        })
    }

    pub fn predict(&self, seq: &PressureSequence) -> Result<Vec<f64>> {
        Ok(self.infer(seq)?.prob)
    }

    pub fn cast<G: Scalar>(&self) -> Astn<G> {
        Astn {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.params.encode(serde_json::json!({ "astn_config": self.config }))
    }

    /// Rebuilds a network from checkpoint bytes, using the embedded config.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (_, meta) = crate::autograd::decode_checkpoint::<F>(bytes, path)?;
        let config: AstnConfig = serde_json::from_value(
            meta.get("astn_config")
                .cloned()
                .ok_or_else(|| AstnError::format("checkpoint", path, "missing astn_config"))?,
        )?;
        let mut net = Astn::new(config, 0)?;
        net.params.restore(bytes, path)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| AstnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| AstnError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
