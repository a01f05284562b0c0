//! Forward and backward passes of individual blocks.

use rand::Rng;

use super::config::{BlockKind, BlockSpec};
use crate::ops::{self, ConvGeom, NormCache};
use crate::params::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Intermediate values a block keeps for its backward pass.
#[derive(Clone, Debug)]
pub enum BlockCache<S> {
    Linear {
        x: Tensor<S>,
    },
    Residual {
        x: Tensor<S>,
        norm1: NormCache<S>,
        act1: Tensor<S>,
        norm2: NormCache<S>,
        act2: Tensor<S>,
    },
}

/// Freshly initialized parameters for a residual block `cin -> cout`.
pub(crate) fn residual_params<S: Scalar>(prefix: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Vec<Param<S>> {
    let mut p = vec![
        Param::filled(format!("{prefix}.norm1.gamma"), vec![cin], S::one()),
        Param::zeros(format!("{prefix}.norm1.beta"), vec![cin]),
        Param::fan_in_uniform(format!("{prefix}.conv1.weight"), vec![cout, cin, 3, 3], cin * 9, rng),
        Param::zeros(format!("{prefix}.conv1.bias"), vec![cout]),
        Param::filled(format!("{prefix}.norm2.gamma"), vec![cout], S::one()),
        Param::zeros(format!("{prefix}.norm2.beta"), vec![cout]),
        Param::fan_in_uniform(format!("{prefix}.conv2.weight"), vec![cout, cout, 3, 3], cout * 9, rng),
        Param::zeros(format!("{prefix}.conv2.bias"), vec![cout]),
    ];
    if cin != cout {
        p.push(Param::fan_in_uniform(format!("{prefix}.proj.weight"), vec![cout, cin, 1, 1], cin, rng));
        p.push(Param::zeros(format!("{prefix}.proj.bias"), vec![cout]));
    }
    p
}

pub(crate) fn block_params<S: Scalar>(spec: &BlockSpec, rng: &mut impl Rng) -> Vec<Param<S>> {
    let (cin, cout, name) = (spec.in_channels, spec.out_channels, spec.name.as_str());
    match spec.kind {
        BlockKind::Residual => residual_params(name, cin, cout, rng),
        BlockKind::InitConv | BlockKind::DownConv => vec![
            Param::fan_in_uniform(format!("{name}.conv.weight"), vec![cout, cin, 3, 3], cin * 9, rng),
            Param::zeros(format!("{name}.conv.bias"), vec![cout]),
        ],
        BlockKind::UpConv => vec![
            Param::fan_in_uniform(format!("{name}.conv.weight"), vec![cin, cout, 2, 2], cin, rng),
            Param::zeros(format!("{name}.conv.bias"), vec![cout]),
        ],
        BlockKind::FinalConv => vec![
            Param::fan_in_uniform(format!("{name}.conv.weight"), vec![cout, cin, 1, 1], cin, rng),
            Param::zeros(format!("{name}.conv.bias"), vec![cout]),
        ],
    }
}

/// Pre-activation residual block: `y = conv2(relu(norm2(conv1(relu(norm1(x)))))) + shortcut(x)`.
pub(crate) fn residual_forward<S: Scalar>(
    p: &[Param<S>],
    cout: usize,
    x: &Tensor<S>,
    keep: bool,
) -> (Tensor<S>, Option<BlockCache<S>>) {
    let (a1, norm1) = ops::instance_norm_forward(x, &p[0].data, &p[1].data);
    let act1 = ops::relu_forward(&a1);
    drop(a1);
    let c1 = ops::conv2d_forward(&act1, &p[2].data, &p[3].data, cout, ConvGeom::SAME3);
    let (a2, norm2) = ops::instance_norm_forward(&c1, &p[4].data, &p[5].data);
    drop(c1);
    let act2 = ops::relu_forward(&a2);
    drop(a2);
    let mut y = ops::conv2d_forward(&act2, &p[6].data, &p[7].data, cout, ConvGeom::SAME3);
    if p.len() > 8 {
        y.add_assign(&ops::conv2d_forward(x, &p[8].data, &p[9].data, cout, ConvGeom::POINT));
    } else {
        y.add_assign(x);
    }
    let cache = keep.then(|| BlockCache::Residual {
        x: x.clone(),
        norm1,
        act1,
        norm2,
        act2,
    });
    (y, cache)
}

pub(crate) fn residual_backward<S: Scalar>(
    p: &[Param<S>],
    cout: usize,
    cache: &BlockCache<S>,
    dy: &Tensor<S>,
    grads: Option<&mut [Param<S>]>,
    need_dx: bool,
) -> Option<Tensor<S>> {
    let BlockCache::Residual {
        x,
        norm1,
        act1,
        norm2,
        act2,
    } = cache
    else {
        panic!("residual block given a non-residual cache");
    };
    let mut g = grads.map(|g| g.iter_mut().map(|p| p.data.as_mut_slice()).collect::<Vec<_>>());
    let mut slot = |i: usize| -> Option<&mut [S]> { g.as_mut().map(|v| std::mem::take(&mut v[i])) };
    let (dw2, db2) = (slot(6), slot(7));
    let d_act2 = ops::conv2d_backward(act2, &p[6].data, cout, ConvGeom::SAME3, dy, dw2, db2, true).unwrap();
    let d_a2 = ops::relu_backward(act2, &d_act2);
    drop(d_act2);
    let (dg2, dbeta2) = (slot(4), slot(5));
    let d_c1 = ops::instance_norm_backward(norm2, &p[4].data, &d_a2, dg2, dbeta2);
    drop(d_a2);
    let (dw1, db1) = (slot(2), slot(3));
    let d_act1 = ops::conv2d_backward(act1, &p[2].data, cout, ConvGeom::SAME3, &d_c1, dw1, db1, true).unwrap();
    drop(d_c1);
    let d_a1 = ops::relu_backward(act1, &d_act1);
    drop(d_act1);
    let (dg1, dbeta1) = (slot(0), slot(1));
    let has_proj = p.len() > 8;
    let (dwp, dbp) = if has_proj { (slot(8), slot(9)) } else { (None, None) };
    if !need_dx {
        // Parameter gradients of the normalization and projection still need computing.
        let _ = ops::instance_norm_backward(norm1, &p[0].data, &d_a1, dg1, dbeta1);
        if has_proj {
            ops::conv2d_backward(x, &p[8].data, cout, ConvGeom::POINT, dy, dwp, dbp, false);
        }
        return None;
    }
    let mut dx = ops::instance_norm_backward(norm1, &p[0].data, &d_a1, dg1, dbeta1);
    if has_proj {
        let d_short = ops::conv2d_backward(x, &p[8].data, cout, ConvGeom::POINT, dy, dwp, dbp, true).unwrap();
        dx.add_assign(&d_short);
    } else {
        dx.add_assign(dy);
    }
    Some(dx)
}

pub(crate) fn block_forward<S: Scalar>(
    spec: &BlockSpec,
    p: &[Param<S>],
    x: &Tensor<S>,
    keep: bool,
) -> (Tensor<S>, Option<BlockCache<S>>) {
    let cout = spec.out_channels;
    let y = match spec.kind {
        BlockKind::Residual => return residual_forward(p, cout, x, keep),
        BlockKind::InitConv => ops::conv2d_forward(x, &p[0].data, &p[1].data, cout, ConvGeom::SAME3),
        BlockKind::DownConv => ops::conv2d_forward(x, &p[0].data, &p[1].data, cout, ConvGeom::DOWN3),
        BlockKind::FinalConv => ops::conv2d_forward(x, &p[0].data, &p[1].data, cout, ConvGeom::POINT),
        BlockKind::UpConv => ops::conv_transpose2_forward(x, &p[0].data, &p[1].data, cout),
    };
    (y, keep.then(|| BlockCache::Linear { x: x.clone() }))
}

/// Backward of one block. Parameter gradients are accumulated into `grads`
/// when given; the input gradient is returned when `need_dx`.
pub(crate) fn block_backward<S: Scalar>(
    spec: &BlockSpec,
    p: &[Param<S>],
    cache: &BlockCache<S>,
    dy: &Tensor<S>,
    grads: Option<&mut [Param<S>]>,
    need_dx: bool,
) -> Option<Tensor<S>> {
    let cout = spec.out_channels;
    if spec.kind == BlockKind::Residual {
        return residual_backward(p, cout, cache, dy, grads, need_dx);
    }
    let BlockCache::Linear { x } = cache else {
        panic!("convolution block given a residual cache");
    };
    let (dw, db) = match grads {
        Some(g) => {
            let (w, b) = g.split_at_mut(1);
            (Some(w[0].data.as_mut_slice()), Some(b[0].data.as_mut_slice()))
        }
        None => (None, None),
    };
    match spec.kind {
        BlockKind::InitConv => ops::conv2d_backward(x, &p[0].data, cout, ConvGeom::SAME3, dy, dw, db, need_dx),
        BlockKind::DownConv => ops::conv2d_backward(x, &p[0].data, cout, ConvGeom::DOWN3, dy, dw, db, need_dx),
        BlockKind::FinalConv => ops::conv2d_backward(x, &p[0].data, cout, ConvGeom::POINT, dy, dw, db, need_dx),
        BlockKind::UpConv => ops::conv_transpose2_backward(x, &p[0].data, cout, dy, dw, db, need_dx),
        BlockKind::Residual => unreachable!(),
    }
}
