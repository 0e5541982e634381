//! Encoder/decoder layout and the forward graph.
//!
//! The encoder follows the InceptionV3 stage structure with every batch norm
//! replaced by group norm and "same" padding throughout, so each stride-2
//! stage halves the resolution exactly:
//!
//! ```text
//! stem.0-2   3x3/2 32, 3x3 32, 3x3 64            H/2   (tap)
//! stem.3-4   maxpool/2, 1x1 80, 3x3 192          H/4   (tap)
//! blockA     maxpool/2, 3 × InceptionA           H/8   (tap)
//! reduceA    InceptionB-style reduction, 768     H/16
//! blockB     5 × InceptionC (7x7 factorized)     H/16  (tap)
//! reduceB    InceptionD-style reduction, 1280    H/32
//! final      2 × InceptionE, 2048                H/32
//! ```
//!
//! The decoder upsamples five times; each stage concatenates the matching
//! tap (the input image at full resolution) and applies conv3x3 + GN + ReLU
//! with 1024, 512, 256, 128, 64 channels.

use crate::error::Result;
use crate::nn::{Conv2dGeometry, GroupNormParams, Pool2d};
use crate::tensor::{Scalar, Tape, Var};

use super::config::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ParamKind {
    /// conv kernel `[cout, cin, kh, kw]`
    Weight { fan_in: usize },
    Bias,
    Gamma,
    Beta,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub(crate) kind: ParamKind,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// conv (no bias) → group norm → ReLU
#[derive(Clone, Debug)]
pub(crate) struct ConvUnit {
    weight: usize,
    gamma: usize,
    beta: usize,
    geom: Conv2dGeometry,
    pub(crate) cout: usize,
}

struct Builder<'c> {
    cfg: &'c ModelConfig,
    specs: Vec<ParamSpec>,
}

impl Builder<'_> {
    fn param(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) -> usize {
        self.specs.push(ParamSpec { name, shape, kind });
        self.specs.len() - 1
    }

    /// Unit with an unscaled output width; used by the decoder.
    fn unit_raw(&mut self, name: &str, cin: usize, cout: usize, k: (usize, usize), stride: usize) -> ConvUnit {
        let (kh, kw) = k;
        let weight = self.param(
            format!("{name}.conv.weight"),
            vec![cout, cin, kh, kw],
            ParamKind::Weight { fan_in: cin * kh * kw },
        );
        let gamma = self.param(format!("{name}.norm.gamma"), vec![cout], ParamKind::Gamma);
        let beta = self.param(format!("{name}.norm.beta"), vec![cout], ParamKind::Beta);
        ConvUnit {
            weight,
            gamma,
            beta,
            geom: Conv2dGeometry::new(stride, kh / 2, kw / 2),
            cout,
        }
    }

    /// Unit whose nominal output width `cout` is scaled by the width factor.
    fn unit(&mut self, name: &str, cin: usize, cout: usize, k: (usize, usize), stride: usize) -> ConvUnit {
        let c = self.cfg.ch(cout);
        self.unit_raw(name, cin, c, k, stride)
    }

    /// Chain of units; each entry is (suffix, nominal width, kernel, stride).
    fn chain(&mut self, prefix: &str, cin: usize, layers: &[(&str, usize, (usize, usize), usize)]) -> Vec<ConvUnit> {
        let mut c = cin;
        layers
            .iter()
            .map(|&(suffix, cout, k, s)| {
                let u = self.unit(&format!("{prefix}.{suffix}"), c, cout, k, s);
                c = u.cout;
                u
            })
            .collect()
    }
}

fn out_channels(chain: &[ConvUnit]) -> usize {
    chain.last().map(|u| u.cout).unwrap_or(0)
}

#[derive(Clone, Debug)]
struct InceptionA {
    b1: Vec<ConvUnit>,
    b5: Vec<ConvUnit>,
    b3: Vec<ConvUnit>,
    pool: Vec<ConvUnit>,
}

impl InceptionA {
    fn new(b: &mut Builder, p: &str, cin: usize, pool_features: usize) -> Self {
        Self {
            b1: b.chain(p, cin, &[("branch1x1", 64, (1, 1), 1)]),
            b5: b.chain(p, cin, &[("branch5x5_1", 48, (1, 1), 1), ("branch5x5_2", 64, (5, 5), 1)]),
            b3: b.chain(
                p,
                cin,
                &[
                    ("branch3x3dbl_1", 64, (1, 1), 1),
                    ("branch3x3dbl_2", 96, (3, 3), 1),
                    ("branch3x3dbl_3", 96, (3, 3), 1),
                ],
            ),
            pool: b.chain(p, cin, &[("branch_pool", pool_features, (1, 1), 1)]),
        }
    }

    fn cout(&self) -> usize {
        [&self.b1, &self.b5, &self.b3, &self.pool].iter().map(|c| out_channels(c)).sum()
    }

    fn forward<T: Scalar>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let a = f.chain(&self.b1, x)?;
        let b = f.chain(&self.b5, x)?;
        let c = f.chain(&self.b3, x)?;
        let p = f.tape.avg_pool2d(x, Pool2d::new(3, 1, 1))?;
        let p = f.chain(&self.pool, p)?;
        f.tape.concat_channels(&[a, b, c, p])
    }
}

/// Grid reduction to H/16.
#[derive(Clone, Debug)]
struct ReductionA {
    b3: Vec<ConvUnit>,
    dbl: Vec<ConvUnit>,
    cin: usize,
}

impl ReductionA {
    fn new(b: &mut Builder, p: &str, cin: usize) -> Self {
        Self {
            b3: b.chain(p, cin, &[("branch3x3", 384, (3, 3), 2)]),
            dbl: b.chain(
                p,
                cin,
                &[
                    ("branch3x3dbl_1", 64, (1, 1), 1),
                    ("branch3x3dbl_2", 96, (3, 3), 1),
                    ("branch3x3dbl_3", 96, (3, 3), 2),
                ],
            ),
            cin,
        }
    }

    fn cout(&self) -> usize {
        out_channels(&self.b3) + out_channels(&self.dbl) + self.cin
    }

    fn forward<T: Scalar>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let a = f.chain(&self.b3, x)?;
        let b = f.chain(&self.dbl, x)?;
        let p = f.tape.max_pool2d(x, Pool2d::new(3, 2, 1))?;
        f.tape.concat_channels(&[a, b, p])
    }
}

/// Unit with 7x7 convolutions factorized into 1x7 and 7x1.
#[derive(Clone, Debug)]
struct InceptionC {
    b1: Vec<ConvUnit>,
    b7: Vec<ConvUnit>,
    dbl: Vec<ConvUnit>,
    pool: Vec<ConvUnit>,
}

impl InceptionC {
    fn new(b: &mut Builder, p: &str, cin: usize, c7: usize) -> Self {
        Self {
            b1: b.chain(p, cin, &[("branch1x1", 192, (1, 1), 1)]),
            b7: b.chain(
                p,
                cin,
                &[
                    ("branch7x7_1", c7, (1, 1), 1),
                    ("branch7x7_2", c7, (1, 7), 1),
                    ("branch7x7_3", 192, (7, 1), 1),
                ],
            ),
            dbl: b.chain(
                p,
                cin,
                &[
                    ("branch7x7dbl_1", c7, (1, 1), 1),
                    ("branch7x7dbl_2", c7, (7, 1), 1),
                    ("branch7x7dbl_3", c7, (1, 7), 1),
                    ("branch7x7dbl_4", c7, (7, 1), 1),
                    ("branch7x7dbl_5", 192, (1, 7), 1),
                ],
            ),
            pool: b.chain(p, cin, &[("branch_pool", 192, (1, 1), 1)]),
        }
    }

    fn cout(&self) -> usize {
        [&self.b1, &self.b7, &self.dbl, &self.pool].iter().map(|c| out_channels(c)).sum()
    }

    fn forward<T: Scalar>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let a = f.chain(&self.b1, x)?;
        let b = f.chain(&self.b7, x)?;
        let c = f.chain(&self.dbl, x)?;
        let p = f.tape.avg_pool2d(x, Pool2d::new(3, 1, 1))?;
        let p = f.chain(&self.pool, p)?;
        f.tape.concat_channels(&[a, b, c, p])
    }
}

/// Grid reduction to H/32.
#[derive(Clone, Debug)]
struct ReductionB {
    b3: Vec<ConvUnit>,
    b7: Vec<ConvUnit>,
    cin: usize,
}

impl ReductionB {
    fn new(b: &mut Builder, p: &str, cin: usize) -> Self {
        Self {
            b3: b.chain(p, cin, &[("branch3x3_1", 192, (1, 1), 1), ("branch3x3_2", 320, (3, 3), 2)]),
            b7: b.chain(
                p,
                cin,
                &[
                    ("branch7x7x3_1", 192, (1, 1), 1),
                    ("branch7x7x3_2", 192, (1, 7), 1),
                    ("branch7x7x3_3", 192, (7, 1), 1),
                    ("branch7x7x3_4", 192, (3, 3), 2),
                ],
            ),
            cin,
        }
    }

    fn cout(&self) -> usize {
        out_channels(&self.b3) + out_channels(&self.b7) + self.cin
    }

    fn forward<T: Scalar>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let a = f.chain(&self.b3, x)?;
        let b = f.chain(&self.b7, x)?;
        let p = f.tape.max_pool2d(x, Pool2d::new(3, 2, 1))?;
        f.tape.concat_channels(&[a, b, p])
    }
}

/// Unit with expanded 1x3 / 3x1 filter banks.
#[derive(Clone, Debug)]
struct InceptionE {
    b1: Vec<ConvUnit>,
    b3: Vec<ConvUnit>,
    b3_a: Vec<ConvUnit>,
    b3_b: Vec<ConvUnit>,
    dbl: Vec<ConvUnit>,
    dbl_a: Vec<ConvUnit>,
    dbl_b: Vec<ConvUnit>,
    pool: Vec<ConvUnit>,
}

impl InceptionE {
    fn new(b: &mut Builder, p: &str, cin: usize) -> Self {
        let b1 = b.chain(p, cin, &[("branch1x1", 320, (1, 1), 1)]);
        let b3 = b.chain(p, cin, &[("branch3x3_1", 384, (1, 1), 1)]);
        let b3_a = b.chain(p, out_channels(&b3), &[("branch3x3_2a", 384, (1, 3), 1)]);
        let b3_b = b.chain(p, out_channels(&b3), &[("branch3x3_2b", 384, (3, 1), 1)]);
        let dbl = b.chain(p, cin, &[("branch3x3dbl_1", 448, (1, 1), 1), ("branch3x3dbl_2", 384, (3, 3), 1)]);
        let dbl_a = b.chain(p, out_channels(&dbl), &[("branch3x3dbl_3a", 384, (1, 3), 1)]);
        let dbl_b = b.chain(p, out_channels(&dbl), &[("branch3x3dbl_3b", 384, (3, 1), 1)]);
        let pool = b.chain(p, cin, &[("branch_pool", 192, (1, 1), 1)]);
        Self {
            b1,
            b3,
            b3_a,
            b3_b,
            dbl,
            dbl_a,
            dbl_b,
            pool,
        }
    }

    fn cout(&self) -> usize {
        [&self.b1, &self.b3_a, &self.b3_b, &self.dbl_a, &self.dbl_b, &self.pool]
            .iter()
            .map(|c| out_channels(c))
            .sum()
    }

    fn forward<T: Scalar>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let a = f.chain(&self.b1, x)?;
        let t = f.chain(&self.b3, x)?;
        let b1 = f.chain(&self.b3_a, t)?;
        let b2 = f.chain(&self.b3_b, t)?;
        let t = f.chain(&self.dbl, x)?;
        let c1 = f.chain(&self.dbl_a, t)?;
        let c2 = f.chain(&self.dbl_b, t)?;
        let p = f.tape.avg_pool2d(x, Pool2d::new(3, 1, 1))?;
        let p = f.chain(&self.pool, p)?;
        f.tape.concat_channels(&[a, b1, b2, c1, c2, p])
    }
}

#[derive(Clone, Debug)]
struct Encoder {
    stem_half: Vec<ConvUnit>,
    stem_quarter: Vec<ConvUnit>,
    block_a: Vec<InceptionA>,
    reduce_a: ReductionA,
    block_b: Vec<InceptionC>,
    reduce_b: ReductionB,
    final_group: Vec<InceptionE>,
}

/// Encoder activations kept for the decoder, finest first.
struct Taps {
    input: Var,
    half: Var,
    quarter: Var,
    eighth: Var,
    sixteenth: Var,
    bottom: Var,
}

impl Encoder {
    fn forward<T: Scalar>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Taps> {
        let half = f.chain(&self.stem_half, x)?;
        let t = f.tape.max_pool2d(half, Pool2d::new(3, 2, 1))?;
        let quarter = f.chain(&self.stem_quarter, t)?;
        let mut t = f.tape.max_pool2d(quarter, Pool2d::new(3, 2, 1))?;
        for unit in &self.block_a {
            t = unit.forward(f, t)?;
        }
        let eighth = t;
        let mut t = self.reduce_a.forward(f, eighth)?;
        for unit in &self.block_b {
            t = unit.forward(f, t)?;
        }
        let sixteenth = t;
        let mut t = self.reduce_b.forward(f, sixteenth)?;
        for unit in &self.final_group {
            t = unit.forward(f, t)?;
        }
        Ok(Taps {
            input: x,
            half,
            quarter,
            eighth,
            sixteenth,
            bottom: t,
        })
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Architecture {
    pub(crate) specs: Vec<ParamSpec>,
    encoder: Encoder,
    decoder: Vec<ConvUnit>,
    head_weight: usize,
    head_bias: usize,
    skip_connections: bool,
    gn: GroupNormParams,
    dropout_rate: f64,
}

/// Decoder widths before scaling, coarsest stage first.
const DECODER_WIDTHS: [usize; 5] = [1024, 512, 256, 128, 64];

impl Architecture {
    pub(crate) fn new(cfg: &ModelConfig) -> Self {
        let mut b = Builder {
            cfg,
            specs: Vec::new(),
        };
        let stem_half = b.chain(
            "encoder.stem",
            cfg.input_channels,
            &[("0", 32, (3, 3), 2), ("1", 32, (3, 3), 1), ("2", 64, (3, 3), 1)],
        );
        let c_half = out_channels(&stem_half);
        let stem_quarter = b.chain("encoder.stem", c_half, &[("3", 80, (1, 1), 1), ("4", 192, (3, 3), 1)]);
        let c_quarter = out_channels(&stem_quarter);

        let mut c = c_quarter;
        let block_a: Vec<_> = (0..cfg.block_a_repeats)
            .map(|i| {
                let unit = InceptionA::new(&mut b, &format!("encoder.blockA.{i}"), c, if i == 0 { 32 } else { 64 });
                c = unit.cout();
                unit
            })
            .collect();
        let c_eighth = c;
        let reduce_a = ReductionA::new(&mut b, "encoder.reduceA", c);
        c = reduce_a.cout();
        let n_b = cfg.block_b_repeats;
        let block_b: Vec<_> = (0..n_b)
            .map(|i| {
                let c7 = match i {
                    0 => 128,
                    _ if i + 1 == n_b => 192,
                    _ => 160,
                };
                let unit = InceptionC::new(&mut b, &format!("encoder.blockB.{i}"), c, c7);
                c = unit.cout();
                unit
            })
            .collect();
        let c_sixteenth = c;
        let reduce_b = ReductionB::new(&mut b, "encoder.reduceB", c);
        c = reduce_b.cout();
        let final_group: Vec<_> = (0..2)
            .map(|i| {
                let unit = InceptionE::new(&mut b, &format!("encoder.final.{i}"), c);
                c = unit.cout();
                unit
            })
            .collect();

        let skips = [c_sixteenth, c_eighth, c_quarter, c_half, cfg.input_channels];
        let decoder: Vec<_> = DECODER_WIDTHS
            .iter()
            .zip(skips)
            .enumerate()
            .map(|(i, (&width, skip))| {
                let cin = c + if cfg.skip_connections { skip } else { 0 };
                let unit = b.unit(&format!("decoder.{i}"), cin, width, (3, 3), 1);
                c = unit.cout;
                unit
            })
            .collect();
        let head_weight = b.param(
            "head.weight".into(),
            vec![1, c, 1, 1],
            ParamKind::Weight { fan_in: c },
        );
        let head_bias = b.param("head.bias".into(), vec![1], ParamKind::Bias);

        Self {
            specs: b.specs,
            encoder: Encoder {
                stem_half,
                stem_quarter,
                block_a,
                reduce_a,
                block_b,
                reduce_b,
                final_group,
            },
            decoder,
            head_weight,
            head_bias,
            skip_connections: cfg.skip_connections,
            gn: GroupNormParams::new(cfg.groups, cfg.gn_epsilon),
            dropout_rate: cfg.dropout_rate,
        }
    }

    pub(crate) fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        x: Var,
        training: bool,
        seed: u64,
    ) -> Result<Var> {
        let mut f = Fwd {
            tape,
            params,
            gn: self.gn,
        };
        let taps = self.encoder.forward(&mut f, x)?;
        let skips = [taps.sixteenth, taps.eighth, taps.quarter, taps.half, taps.input];
        let mut t = taps.bottom;
        for (unit, skip) in self.decoder.iter().zip(skips) {
            let up = f.tape.upsample2x(t)?;
            let joined = if self.skip_connections {
                f.tape.concat_channels(&[up, skip])?
            } else {
                up
            };
            t = f.unit(unit, joined)?;
        }
        let t = f.tape.dropout(t, self.dropout_rate, training, seed)?;
        let logits = f.tape.conv2d(
            t,
            params[self.head_weight],
            Some(params[self.head_bias]),
            Conv2dGeometry::new(1, 0, 0),
        )?;
        f.tape.sigmoid(logits)
    }
}

/// Forward-pass context: the tape plus the bound parameter variables.
struct Fwd<'a, T: Scalar> {
    tape: &'a mut Tape<T>,
    params: &'a [Var],
    gn: GroupNormParams,
}

impl<T: Scalar> Fwd<'_, T> {
    fn unit(&mut self, u: &ConvUnit, x: Var) -> Result<Var> {
        let y = self.tape.conv2d(x, self.params[u.weight], None, u.geom)?;
        let y = self
            .tape
            .group_norm(y, self.params[u.gamma], self.params[u.beta], &self.gn)?;
        self.tape.relu(y)
    }

    fn chain(&mut self, units: &[ConvUnit], x: Var) -> Result<Var> {
        units.iter().try_fold(x, |t, u| self.unit(u, t))
    }
}
