use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, Parameter, ParameterStore};
use super::tensor::Tensor;
use crate::error::{HarpError, Result};
use crate::scalar::Scalar;

/// Affine layer `y = x·Wᵀ + b`, `W: [out, in]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParameterStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add_uniform(format!("{name}.weight"), &[out_dim, in_dim], gain, rng)?;
        let b = store.add_zeros(format!("{name}.bias"), &[out_dim])?;
        Ok(Self {
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParameterStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, Some(b))
    }
}

/// Evaluates a single affine map on a 1-D input.
pub fn linear_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Parameter<T>,
    bias: &Parameter<T>,
) -> Result<Tensor<T>> {
    let ws = weights.value.shape();
    if input.shape().len() != 1 || ws.len() != 2 || ws[1] != input.len() {
        return Err(HarpError::Dimension {
            op: "linear_forward",
            left: input.shape().to_vec(),
            right: ws.to_vec(),
        });
    }
    if bias.value.shape() != [ws[0]] {
        return Err(HarpError::Dimension {
            op: "linear_forward bias",
            left: ws.to_vec(),
            right: bias.value.shape().to_vec(),
        });
    }
    let out = (0..ws[0])
        .map(|i| {
            weights
                .value
                .row(i)
                .iter()
                .zip(input.data())
                .fold(bias.value.data()[i], |acc, (&w, &x)| acc + w * x)
        })
        .collect();
    Ok(Tensor::vector(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruState<T> {
    pub hidden: Tensor<T>,
}

impl<T: Scalar> GruState<T> {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            hidden: Tensor::zeros(&[hidden_dim]),
        }
    }
}

/// GRU cell with stacked gate weights, gate order `[reset, update, candidate]`.
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z  = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruCell {
    pub input: Linear,
    pub hidden: Linear,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParameterStore<T>,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let input = Linear::new(store, &format!("{name}.ih"), in_dim, 3 * hidden_dim, 1.0, rng)?;
        let hidden = Linear::new(store, &format!("{name}.hh"), hidden_dim, 3 * hidden_dim, 1.0, rng)?;
        Ok(Self {
            input,
            hidden,
            hidden_dim,
        })
    }

    /// Batched step: `x: [m, in]`, `h: [m, H]` → `[m, H]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        x: Var,
        h: Var,
    ) -> Result<Var> {
        let hd = self.hidden_dim;
        if g.value(h).cols() != hd {
            return Err(HarpError::Dimension {
                op: "gru hidden",
                left: g.value(h).shape().to_vec(),
                right: vec![hd],
            });
        }
        let gi = self.input.forward(g, store, x)?;
        let gh = self.hidden.forward(g, store, h)?;
        let (ir, iz, inn) = (g.slice_cols(gi, 0, hd)?, g.slice_cols(gi, hd, hd)?, g.slice_cols(gi, 2 * hd, hd)?);
        let (hr, hz, hn) = (g.slice_cols(gh, 0, hd)?, g.slice_cols(gh, hd, hd)?, g.slice_cols(gh, 2 * hd, hd)?);
        let r = g.add(ir, hr)?;
        let r = g.sigmoid(r);
        let z = g.add(iz, hz)?;
        let z = g.sigmoid(z);
        let rh = g.mul(r, hn)?;
        let n = g.add(inn, rh)?;
        let n = g.tanh(n);
        let diff = g.sub(h, n)?;
        let zd = g.mul(z, diff)?;
        g.add(n, zd)
    }
}

/// One GRU update on a single 1-D input.
pub fn gru_step<T: Scalar>(
    input: &Tensor<T>,
    state: &GruState<T>,
    cell: &GruCell,
    store: &ParameterStore<T>,
) -> Result<GruState<T>> {
    if input.len() != cell.input.in_dim {
        return Err(HarpError::Dimension {
            op: "gru_step input",
            left: input.shape().to_vec(),
            right: vec![cell.input.in_dim],
        });
    }
    if state.hidden.len() != cell.hidden_dim {
        return Err(HarpError::Dimension {
            op: "gru_step hidden",
            left: state.hidden.shape().to_vec(),
            right: vec![cell.hidden_dim],
        });
    }
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let h = g.constant(state.hidden.clone());
    let out = cell.forward(&mut g, store, x, h)?;
    let hidden = Tensor::vector(g.value(out).data().to_vec());
    if !hidden.is_finite() {
        return Err(HarpError::Numeric("gru_step produced non-finite hidden state".into()));
    }
    Ok(GruState { hidden })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Elu,
    Identity,
}

/// Converts `Â` into per-row neighbour lists after checking it is symmetric,
/// 0/1 valued and has a unit diagonal.
pub fn adjacency_sets<T: Scalar>(adj: &Tensor<T>) -> Result<Vec<Vec<usize>>> {
    let (n, m) = adj.dims2();
    if n != m || adj.shape().len() != 2 {
        return Err(HarpError::Dimension {
            op: "adjacency",
            left: adj.shape().to_vec(),
            right: vec![n, n],
        });
    }
    let mut sets = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::new();
        for j in 0..n {
            let v = adj.at(i, j);
            if v != T::zero() && v != T::one() {
                return Err(HarpError::Contract(format!("adjacency entry ({i},{j}) is not 0/1")));
            }
            if v != adj.at(j, i) {
                return Err(HarpError::Contract(format!("adjacency not symmetric at ({i},{j})")));
            }
            if i == j && v != T::one() {
                return Err(HarpError::Contract(format!("adjacency missing self-loop at {i}")));
            }
            if v == T::one() {
                row.push(j);
            }
        }
        sets.push(row);
    }
    Ok(sets)
}

/// Graph-level GCN layer `σ(Â·H·W)` with `Â` given as neighbour lists.
pub fn gcn_layer<T: Scalar>(
    g: &mut Graph<T>,
    feats: Var,
    adj_sets: &[Vec<usize>],
    w: Var,
    act: Activation,
) -> Result<Var> {
    let ones = vec![T::one(); adj_sets.len()];
    let agg = g.set_sum(feats, adj_sets, &ones)?;
    let lin = g.matmul(agg, w)?;
    Ok(match act {
        Activation::Elu => g.elu(lin),
        Activation::Identity => lin,
    })
}

/// `σ(Â·F·W)` with ELU activation and no degree normalisation.
pub fn gcn_layer_forward<T: Scalar>(
    node_feats: &Tensor<T>,
    adj_with_self: &Tensor<T>,
    weights: &Parameter<T>,
) -> Result<Tensor<T>> {
    gcn_layer_forward_with(node_feats, adj_with_self, weights, Activation::Elu)
}

pub fn gcn_layer_forward_with<T: Scalar>(
    node_feats: &Tensor<T>,
    adj_with_self: &Tensor<T>,
    weights: &Parameter<T>,
    act: Activation,
) -> Result<Tensor<T>> {
    let sets = adjacency_sets(adj_with_self)?;
    let (n, d_in) = node_feats.dims2();
    if n != sets.len() || weights.value.rows() != d_in {
        return Err(HarpError::Dimension {
            op: "gcn_layer_forward",
            left: node_feats.shape().to_vec(),
            right: weights.value.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let f = g.constant(node_feats.clone());
    let w = g.constant(weights.value.clone());
    let out = gcn_layer(&mut g, f, &sets, w, act)?;
    Ok(g.value(out).clone())
}
