//! Forward pass with activation trace, and its reverse-mode gradient.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::layers::{
    attention_backward, attention_with_probs, gelu, gelu_grad, layer_norm, layer_norm_backward,
    linear, modulate, modulate_backward, positions, silu, silu_grad, sinusoidal, Mat,
};
use super::params::{init_params, Layout, Linear, NetConfig};
use super::tap::AttentionTap;
use crate::error::{Error, Result};
use crate::flow::{Latent, VelocityField};

/// Time is scaled by this before the sinusoidal features.
const TIME_SCALE: f64 = 1000.0;

/// A conditioning label: class indices, or the learned null label used for
/// the unconditional branch of guidance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Class { timbre: usize, style: usize },
    Null,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    pub label: Label,
    /// `text_tokens × model_dim`.
    pub text_tokens: Mat,
    /// Mean of the text tokens; added to the time embedding.
    pub coarse_vector: Array1<f64>,
    pub is_null: bool,
}

/// The velocity network: parameters plus the fixed position table.
#[derive(Clone, Debug)]
pub struct Net {
    config: NetConfig,
    layout: Layout,
    params: Vec<f64>,
    positions: Mat,
}

#[derive(Clone, Debug)]
struct StreamTrace {
    m: Array1<f64>,
    xhat1: Mat,
    inv1: Vec<f64>,
    a1: Mat,
    att: Mat,
    o: Mat,
    xhat2: Mat,
    inv2: Vec<f64>,
    a2: Mat,
    f1: Mat,
    g: Mat,
    f2: Mat,
}

#[derive(Clone, Debug)]
struct DoubleTrace {
    audio: StreamTrace,
    text: StreamTrace,
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
}

#[derive(Clone, Debug)]
struct SingleTrace {
    m: Array1<f64>,
    xhat: Mat,
    inv: Vec<f64>,
    a: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    mlp_in: Mat,
    probs: Vec<Mat>,
    cat: Mat,
    out: Mat,
}

#[derive(Clone, Debug)]
pub(crate) struct Trace {
    x_in: Mat,
    tf: Mat,
    h1pre: Mat,
    h1: Mat,
    vec: Array1<f64>,
    y: Mat,
    doubles: Vec<DoubleTrace>,
    singles: Vec<SingleTrace>,
    fm: Array1<f64>,
    fxhat: Mat,
    finv: Vec<f64>,
    fa: Mat,
}

fn row(v: &Array1<f64>, i: usize, d: usize) -> ArrayView1<'_, f64> {
    v.slice(s![i * d..(i + 1) * d])
}

fn as_row(v: &Array1<f64>) -> Mat {
    v.clone().insert_axis(Axis(0))
}

impl Net {
    pub fn new(config: NetConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Self::from_params(config, params)
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::dim(format!(
                "config needs {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self {
            positions: positions(config.audio_tokens, config.model_dim),
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }

    pub fn latent_shape(&self) -> (usize, usize) {
        (self.config.audio_tokens, self.config.latent_channels)
    }

    pub fn condition(&self, label: Label) -> Result<Conditioning> {
        let p = &self.params;
        let l = &self.layout;
        let text_tokens = match label {
            Label::Class { timbre, style } => {
                if timbre >= self.config.timbre_classes || style >= self.config.style_classes {
                    return Err(Error::Range(format!(
                        "label ({timbre}, {style}) outside vocabulary ({}, {})",
                        self.config.timbre_classes, self.config.style_classes
                    )));
                }
                ndarray::stack(
                    Axis(0),
                    &[l.timbre_embed.row(p, timbre), l.style_embed.row(p, style)],
                )
                .expect("equal widths")
            }
            Label::Null => l.null_text.mat(p).to_owned(),
        };
        let coarse_vector = text_tokens.mean_axis(Axis(0)).expect("nonempty");
        Ok(Conditioning {
            label,
            text_tokens,
            coarse_vector,
            is_null: label == Label::Null,
        })
    }

    pub fn null_condition(&self) -> Conditioning {
        self.condition(Label::Null).expect("null label is always valid")
    }

    fn lin(&self, x: &Mat, l: &Linear) -> Mat {
        linear(x, l.w.mat(&self.params), l.b.vec(&self.params))
    }

    fn modulation(&self, y: &Mat, l: &Linear) -> Array1<f64> {
        self.lin(y, l).remove_axis(Axis(0))
    }

    /// Velocity at `(z, t)` under `cond`, with the tap observing or editing
    /// single-block attention.
    pub fn forward(&self, z: &Latent, t: f64, cond: &Conditioning, tap: &mut AttentionTap) -> Result<Latent> {
        Ok(self.forward_traced(z, t, cond, tap)?.0)
    }

    pub(crate) fn forward_traced(
        &self,
        z: &Latent,
        t: f64,
        cond: &Conditioning,
        tap: &mut AttentionTap,
    ) -> Result<(Latent, Trace)> {
        let cfg = &self.config;
        let (a_tok, c) = self.latent_shape();
        if z.dim() != (a_tok, c) {
            return Err(Error::dim(format!("latent {:?}, network expects ({a_tok}, {c})", z.dim())));
        }
        if cond.text_tokens.dim() != (cfg.text_tokens, cfg.model_dim) {
            return Err(Error::dim(format!(
                "text tokens {:?}, network expects ({}, {})",
                cond.text_tokens.dim(),
                cfg.text_tokens,
                cfg.model_dim
            )));
        }
        let d = cfg.model_dim;
        let heads = cfg.head_count;
        let n_txt = cfg.text_tokens;
        let l = &self.layout;

        let x_in = z.to_owned();
        let mut x = self.lin(&x_in, &l.input) + &self.positions;
        let tf = as_row(&sinusoidal(t * TIME_SCALE, d, 10_000.0));
        let h1pre = self.lin(&tf, &l.time1);
        let h1 = h1pre.mapv(silu);
        let temb = self.lin(&h1, &l.time2).remove_axis(Axis(0));
        let vec = temb + &cond.coarse_vector;
        let y = as_row(&vec.mapv(silu));
        let mut txt = cond.text_tokens.clone();

        let mut doubles = Vec::with_capacity(l.double.len());
        for blk in &l.double {
            let mut pre = Vec::with_capacity(2);
            for (sp, h) in [(&blk.text, &txt), (&blk.audio, &x)] {
                let m = self.modulation(&y, &sp.modulation);
                let (xhat1, inv1) = layer_norm(h);
                let a1 = modulate(&xhat1, row(&m, 0, d), row(&m, 1, d));
                let qkv = self.lin(&a1, &sp.qkv);
                pre.push((m, xhat1, inv1, a1, qkv));
            }
            let q = concatenate(Axis(0), &[pre[0].4.slice(s![.., ..d]), pre[1].4.slice(s![.., ..d])])
                .expect("equal widths");
            let k = concatenate(
                Axis(0),
                &[pre[0].4.slice(s![.., d..2 * d]), pre[1].4.slice(s![.., d..2 * d])],
            )
            .expect("equal widths");
            let v = concatenate(
                Axis(0),
                &[pre[0].4.slice(s![.., 2 * d..]), pre[1].4.slice(s![.., 2 * d..])],
            )
            .expect("equal widths");
            let (att, probs) = attention_with_probs(q.view(), k.view(), v.view(), heads)?;
            let mut traces = Vec::with_capacity(2);
            for (i, ((m, xhat1, inv1, a1, _), sp)) in pre.into_iter().zip([&blk.text, &blk.audio]).enumerate() {
                let rows = if i == 0 { 0..n_txt } else { n_txt..n_txt + a_tok };
                let h = if i == 0 { &mut txt } else { &mut x };
                let att_s = att.slice(s![rows, ..]).to_owned();
                let o = self.lin(&att_s, &sp.proj);
                *h += &(&o * &row(&m, 2, d));
                let (xhat2, inv2) = layer_norm(h);
                let a2 = modulate(&xhat2, row(&m, 3, d), row(&m, 4, d));
                let f1 = self.lin(&a2, &sp.fc1);
                let g = f1.mapv(gelu);
                let f2 = self.lin(&g, &sp.fc2);
                *h += &(&f2 * &row(&m, 5, d));
                traces.push(StreamTrace {
                    m,
                    xhat1,
                    inv1,
                    a1,
                    att: att_s,
                    o,
                    xhat2,
                    inv2,
                    a2,
                    f1,
                    g,
                    f2,
                });
            }
            let audio = traces.pop().expect("two streams");
            let text = traces.pop().expect("two streams");
            doubles.push(DoubleTrace {
                audio,
                text,
                q,
                k,
                v,
                probs,
            });
        }

        let mut h = concatenate(Axis(0), &[txt.view(), x.view()]).expect("equal widths");
        let mut singles = Vec::with_capacity(l.single.len());
        for (bi, blk) in l.single.iter().enumerate() {
            let block = bi + 1;
            let m = self.modulation(&y, &blk.modulation);
            let (xhat, inv) = layer_norm(&h);
            let a = modulate(&xhat, row(&m, 0, d), row(&m, 1, d));
            let l1 = self.lin(&a, &blk.lin1);
            let q = l1.slice(s![.., ..d]).to_owned();
            let mut k = l1.slice(s![.., d..2 * d]).to_owned();
            let mut v = l1.slice(s![.., 2 * d..3 * d]).to_owned();
            let mlp_in = l1.slice(s![.., 3 * d..]).to_owned();
            tap.apply(block, &q, &mut k, &mut v)?;
            let (att, probs) = attention_with_probs(q.view(), k.view(), v.view(), heads)?;
            if tap.wants_probabilities() {
                tap.observe_probabilities(block, &probs);
            }
            let g = mlp_in.mapv(gelu);
            let cat = concatenate(Axis(1), &[att.view(), g.view()]).expect("equal heights");
            let out = self.lin(&cat, &blk.lin2);
            h += &(&out * &row(&m, 2, d));
            singles.push(SingleTrace {
                m,
                xhat,
                inv,
                a,
                q,
                k,
                v,
                mlp_in,
                probs,
                cat,
                out,
            });
        }

        let img = h.slice(s![n_txt.., ..]).to_owned();
        let fm = self.modulation(&y, &l.final_modulation);
        let (fxhat, finv) = layer_norm(&img);
        let fa = modulate(&fxhat, row(&fm, 0, d), row(&fm, 1, d));
        let out = self.lin(&fa, &l.head);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { step: 0 });
        }
        Ok((
            out,
            Trace {
                x_in,
                tf,
                h1pre,
                h1,
                vec,
                y,
                doubles,
                singles,
                fm,
                fxhat,
                finv,
                fa,
            },
        ))
    }

    /// Accumulates `∂L/∂θ` for `L = Σ dout ⊙ v` into `grad`.
    pub(crate) fn backward(&self, trace: &Trace, cond: &Conditioning, dout: &Mat, grad: &mut [f64]) {
        let cfg = &self.config;
        let d = cfg.model_dim;
        let n_txt = cfg.text_tokens;
        let l = &self.layout;
        let p = &self.params;
        let mut dy = Mat::zeros((1, d));

        let dfa = lin_back(grad, p, &l.head, &trace.fa, dout);
        let (dfxhat, dshift, dscale) = modulate_backward(&dfa, &trace.fxhat, row(&trace.fm, 1, d));
        let dimg = layer_norm_backward(&dfxhat, &trace.fxhat, &trace.finv);
        let dfm = concatenate(Axis(0), &[dshift.view(), dscale.view()]).expect("vectors");
        dy += &lin_back(grad, p, &l.final_modulation, &trace.y, &as_row(&dfm));

        let mut dh = Mat::zeros((n_txt + cfg.audio_tokens, d));
        dh.slice_mut(s![n_txt.., ..]).assign(&dimg);
        for (blk, tr) in l.single.iter().zip(&trace.singles).rev() {
            let gate = row(&tr.m, 2, d);
            let dout_b = &dh * &gate;
            let dgate = (&dh * &tr.out).sum_axis(Axis(0));
            let dcat = lin_back(grad, p, &blk.lin2, &tr.cat, &dout_b);
            let datt = dcat.slice(s![.., ..d]).to_owned();
            let mut dmlp = dcat.slice(s![.., d..]).to_owned();
            dmlp.zip_mut_with(&tr.mlp_in, |g, &x| *g *= gelu_grad(x));
            let (dq, dk, dv) = attention_backward(&datt, &tr.q, &tr.k, &tr.v, &tr.probs);
            let dl1 = concatenate(Axis(1), &[dq.view(), dk.view(), dv.view(), dmlp.view()])
                .expect("equal heights");
            let da = lin_back(grad, p, &blk.lin1, &tr.a, &dl1);
            let (dxhat, dshift, dscale) = modulate_backward(&da, &tr.xhat, row(&tr.m, 1, d));
            dh += &layer_norm_backward(&dxhat, &tr.xhat, &tr.inv);
            let dm = concatenate(Axis(0), &[dshift.view(), dscale.view(), dgate.view()]).expect("vectors");
            dy += &lin_back(grad, p, &blk.modulation, &trace.y, &as_row(&dm));
        }

        let mut dtxt = dh.slice(s![..n_txt, ..]).to_owned();
        let mut dx = dh.slice(s![n_txt.., ..]).to_owned();
        for (blk, tr) in l.double.iter().zip(&trace.doubles).rev() {
            let mut datt_parts = Vec::with_capacity(2);
            let mut dh1s = Vec::with_capacity(2);
            for (sp, st, dhs) in [(&blk.text, &tr.text, &dtxt), (&blk.audio, &tr.audio, &dx)] {
                let gate2 = row(&st.m, 5, d);
                let df2 = dhs * &gate2;
                let dgate2 = (dhs * &st.f2).sum_axis(Axis(0));
                let mut dg = lin_back(grad, p, &sp.fc2, &st.g, &df2);
                dg.zip_mut_with(&st.f1, |g, &x| *g *= gelu_grad(x));
                let da2 = lin_back(grad, p, &sp.fc1, &st.a2, &dg);
                let (dxhat2, dshift2, dscale2) = modulate_backward(&da2, &st.xhat2, row(&st.m, 4, d));
                let dh1 = dhs + &layer_norm_backward(&dxhat2, &st.xhat2, &st.inv2);
                let gate1 = row(&st.m, 2, d);
                let do_ = &dh1 * &gate1;
                let dgate1 = (&dh1 * &st.o).sum_axis(Axis(0));
                datt_parts.push(lin_back(grad, p, &sp.proj, &st.att, &do_));
                dh1s.push((dh1, dgate1, dshift2, dscale2, dgate2));
            }
            let datt = concatenate(Axis(0), &[datt_parts[0].view(), datt_parts[1].view()])
                .expect("equal widths");
            let (dq, dk, dv) = attention_backward(&datt, &tr.q, &tr.k, &tr.v, &tr.probs);
            let mut new = Vec::with_capacity(2);
            for (i, ((sp, st), (dh1, dgate1, dshift2, dscale2, dgate2))) in
                [(&blk.text, &tr.text), (&blk.audio, &tr.audio)].into_iter().zip(dh1s).enumerate()
            {
                let rows = if i == 0 { 0..n_txt } else { n_txt..n_txt + cfg.audio_tokens };
                let dqkv = concatenate(
                    Axis(1),
                    &[
                        dq.slice(s![rows.clone(), ..]),
                        dk.slice(s![rows.clone(), ..]),
                        dv.slice(s![rows, ..]),
                    ],
                )
                .expect("equal heights");
                let da1 = lin_back(grad, p, &sp.qkv, &st.a1, &dqkv);
                let (dxhat1, dshift1, dscale1) = modulate_backward(&da1, &st.xhat1, row(&st.m, 1, d));
                let dh0 = dh1 + &layer_norm_backward(&dxhat1, &st.xhat1, &st.inv1);
                let dm = concatenate(
                    Axis(0),
                    &[
                        dshift1.view(),
                        dscale1.view(),
                        dgate1.view(),
                        dshift2.view(),
                        dscale2.view(),
                        dgate2.view(),
                    ],
                )
                .expect("vectors");
                dy += &lin_back(grad, p, &sp.modulation, &trace.y, &as_row(&dm));
                new.push(dh0);
            }
            dx = new.pop().expect("two streams");
            dtxt = new.pop().expect("two streams");
        }

        lin_back(grad, p, &l.input, &trace.x_in, &dx);
        let mut dvec = dy.remove_axis(Axis(0));
        dvec.zip_mut_with(&trace.vec, |g, &x| *g *= silu_grad(x));
        let mut dh1 = lin_back(grad, p, &l.time2, &trace.h1, &as_row(&dvec));
        dh1.zip_mut_with(&trace.h1pre, |g, &x| *g *= silu_grad(x));
        lin_back(grad, p, &l.time1, &trace.tf, &dh1);

        // coarse = mean of the text tokens.
        let share = &dvec / n_txt as f64;
        let targets = match cond.label {
            Label::Class { timbre, style } => vec![(l.timbre_embed, timbre), (l.style_embed, style)],
            Label::Null => (0..n_txt).map(|i| (l.null_text, i)).collect(),
        };
        for (i, (slot, r)) in targets.into_iter().enumerate() {
            let mut g = slot.row_mut(grad, r);
            g += &dtxt.row(i);
            g += &share;
        }
    }
}

/// `dw += xᵀ dy`, `db += Σ dy`; returns `dy wᵀ`.
fn lin_back(grad: &mut [f64], p: &[f64], l: &Linear, x: &Mat, dy: &Mat) -> Mat {
    general_mat_mul(1.0, &x.t(), dy, 1.0, &mut l.w.mat_mut(grad));
    let mut db = l.b.vec_mut(grad);
    db += &dy.sum_axis(Axis(0));
    dy.dot(&l.w.mat(p).t())
}

impl VelocityField for Net {
    type Cond = Conditioning;

    fn velocity(&self, z: &Latent, t: f64, cond: &Conditioning) -> Result<Latent> {
        self.forward(z, t, cond, &mut AttentionTap::passthrough())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::params::jitter;
    use crate::net::tap::Strategy;
    use rand::{Rng, SeedableRng};

    fn setup() -> (Net, Latent) {
        let cfg = NetConfig {
            model_dim: 16,
            head_count: 2,
            double_blocks: 1,
            single_blocks: 3,
            audio_tokens: 5,
            latent_channels: 6,
            seed: 4,
            ..NetConfig::default()
        };
        let mut net = Net::new(cfg).unwrap();
        jitter(net.params_mut(), 0.1, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let z = Latent::from_shape_simple_fn((5, 6), || rng.random_range(-1.0..1.0));
        (net, z)
    }

    #[test]
    fn fresh_network_predicts_zero() {
        let net = Net::new(NetConfig::default()).unwrap();
        let z = Latent::ones((64, 64));
        let v = net.velocity(&z, 0.3, &net.null_condition()).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn recording_does_not_perturb() {
        let (net, z) = setup();
        let cond = net.condition(Label::Class { timbre: 1, style: 2 }).unwrap();
        let plain = net.forward(&z, 0.6, &cond, &mut AttentionTap::passthrough()).unwrap();
        let mut tap = AttentionTap::record(2).at_step(7);
        let rec = net.forward(&z, 0.6, &cond, &mut tap).unwrap();
        assert_eq!(plain, rec);
        let keys: Vec<_> = tap.recorded().keys().copied().collect();
        assert_eq!(keys, vec![(7, 2), (7, 3)]);
    }

    #[test]
    fn self_replacement_is_identity() {
        let (net, z) = setup();
        let cond = net.condition(Label::Class { timbre: 0, style: 1 }).unwrap();
        let mut rec = AttentionTap::record(1);
        let base = net.forward(&z, 0.2, &cond, &mut rec).unwrap();
        let cache = rec.into_recorded();
        for s in [Strategy::None, Strategy::V, Strategy::K, Strategy::Kv] {
            let out = net.forward(&z, 0.2, &cond, &mut AttentionTap::replace(s, &cache, 1)).unwrap();
            let gap = (&out - &base).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(gap <= 1e-12, "{s}: {gap}");
        }
    }

    #[test]
    fn value_replacement_keeps_probabilities() {
        let (net, z) = setup();
        let src = net.condition(Label::Class { timbre: 0, style: 0 }).unwrap();
        let tgt = net.condition(Label::Class { timbre: 2, style: 3 }).unwrap();
        let mut rec = AttentionTap::record(2);
        net.forward(&z, 0.5, &src, &mut rec).unwrap();
        let cache = rec.into_recorded();
        let mut plain = AttentionTap::passthrough().with_probabilities();
        let a = net.forward(&z, 0.5, &tgt, &mut plain).unwrap();
        let mut repl = AttentionTap::replace(Strategy::V, &cache, 2).with_probabilities();
        let b = net.forward(&z, 0.5, &tgt, &mut repl).unwrap();
        assert_ne!(a, b);
        // Block 1 is upstream of any replacement; blocks 2 and 3 see their
        // own queries and keys unchanged only at block 2.
        let p = plain.probabilities().unwrap();
        let r = repl.probabilities().unwrap();
        assert_eq!(p[&(0, 1)], r[&(0, 1)]);
        assert_eq!(p[&(0, 2)], r[&(0, 2)]);
    }

    #[test]
    fn missing_slot_is_a_cache_miss() {
        let (net, z) = setup();
        let cond = net.null_condition();
        let mut rec = AttentionTap::record(3).at_step(0);
        net.forward(&z, 0.5, &cond, &mut rec).unwrap();
        let cache = rec.into_recorded();
        let err = net
            .forward(&z, 0.5, &cond, &mut AttentionTap::replace(Strategy::K, &cache, 2))
            .unwrap_err();
        assert!(matches!(err, Error::CacheMiss { step: 0, block: 2 }), "{err}");
        let err = net
            .forward(&z, 0.5, &cond, &mut AttentionTap::replace(Strategy::K, &cache, 3).at_step(1))
            .unwrap_err();
        assert!(matches!(err, Error::CacheMiss { step: 1, block: 3 }));
    }

    #[test]
    fn conditions_are_validated_and_stable() {
        let (net, z) = setup();
        assert!(matches!(net.condition(Label::Class { timbre: 4, style: 0 }), Err(Error::Range(_))));
        assert_eq!(net.null_condition(), net.null_condition());
        assert!(net.null_condition().is_null);
        assert!(matches!(
            net.velocity(&Latent::zeros((4, 6)), 0.1, &net.null_condition()),
            Err(Error::Dimension(_))
        ));
        let a = net.velocity(&z, 0.1, &net.null_condition()).unwrap();
        let b = net.velocity(&z, 0.1, &net.condition(Label::Class { timbre: 0, style: 0 }).unwrap()).unwrap();
        assert_ne!(a, b);
    }
}
