//! Self-contained neural network stack with hand-written gradients.
//!
//! Networks are a shared `body` followed by zero or more `heads`; a plain
//! MLP is a body with no heads. Parameters live in named flat arrays so
//! checkpoints, soft updates and parameter-space noise can treat a network
//! as an ordered list of tensors without knowing its topology.
//!
//! Layer normalization, when enabled on a layer, standardizes the
//! pre-activation vector of each sample and applies a learned gain/offset
//! before the nonlinearity.

mod checkpoint;
pub mod layers;
mod optim;
mod scalar;

pub use checkpoint::{load_arrays, save_arrays, CHECKPOINT_MAGIC};
pub use layers::{Activation, LN_EPS, SELU_ALPHA, SELU_LAMBDA};
pub use optim::{LrSchedule, OptKind, Optimizer};
pub use scalar::Scalar;

use crate::error::CoreError;
use crate::rng::SplitMix64;
use crate::Result;
use layers::LnCache;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense { width: usize },
    Conv1d { channels: usize, kernel: usize },
    /// Two same-padded convolutions with a skip connection:
    /// y = act(ln2(conv2(act(ln1(conv1(x))))) + x). Channel count is
    /// preserved so the skip is well-typed.
    Residual { kernel: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
    pub layer_norm: bool,
}

impl LayerSpec {
    pub fn dense(width: usize, activation: Activation) -> Self {
        LayerSpec { kind: LayerKind::Dense { width }, activation, layer_norm: false }
    }

    pub fn dense_ln(width: usize, activation: Activation) -> Self {
        LayerSpec { kind: LayerKind::Dense { width }, activation, layer_norm: true }
    }

    pub fn conv1d(channels: usize, kernel: usize, activation: Activation) -> Self {
        LayerSpec { kind: LayerKind::Conv1d { channels, kernel }, activation, layer_norm: false }
    }

    /// Residual block with the default kernel width of 3.
    pub fn residual(activation: Activation) -> Self {
        LayerSpec { kind: LayerKind::Residual { kernel: 3 }, activation, layer_norm: false }
    }
}

/// Network topology: input width, shared body, optional head branches.
/// All heads must produce the same output width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub body: Vec<LayerSpec>,
    pub heads: Vec<Vec<LayerSpec>>,
}

impl NetworkSpec {
    /// Plain feed-forward network without head branches.
    pub fn plain(input_dim: usize, layers: Vec<LayerSpec>) -> Self {
        NetworkSpec { input_dim, body: layers, heads: Vec::new() }
    }

    pub fn with_heads(input_dim: usize, body: Vec<LayerSpec>, heads: Vec<Vec<LayerSpec>>) -> Self {
        NetworkSpec { input_dim, body, heads }
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray<S> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<S>,
}

impl<S> ParamArray<S> {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered parameter arrays plus a monotone version counter bumped by every
/// optimizer step. Published snapshots are immutable; training code clones,
/// steps and republishes.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<S> {
    pub version: u64,
    pub arrays: Vec<ParamArray<S>>,
}

/// Gradients aligned with `NetworkParams::arrays`. Arrays not touched by a
/// backward pass stay empty, which optimizers interpret as "skip entirely"
/// (as opposed to an explicit zero gradient, which still decays momenta).
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    pub arrays: Vec<Vec<S>>,
    pub input: Vec<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Shape {
    c: usize,
    l: usize,
}

impl Shape {
    fn flat(&self) -> usize {
        self.c * self.l
    }
}

#[derive(Debug, Clone)]
struct LayerPlan {
    spec: LayerSpec,
    in_shape: Shape,
    out_shape: Shape,
    /// Index of this layer's first parameter array.
    first: usize,
}

#[derive(Debug, Clone)]
struct NetPlan {
    body: Vec<LayerPlan>,
    heads: Vec<Vec<LayerPlan>>,
    body_shape: Shape,
    out_shape: Shape,
    /// (dims, name) for every array in order.
    arrays: Vec<(Vec<usize>, String)>,
    /// Array index ranges: body plus one range per head.
    body_range: (usize, usize),
    head_ranges: Vec<(usize, usize)>,
}

fn arrays_for_layer(
    spec: &LayerSpec,
    in_shape: Shape,
    prefix: &str,
    idx: usize,
    out: &mut Vec<(Vec<usize>, String)>,
) -> Result<Shape> {
    let name = |suffix: &str| format!("{prefix}.{idx}.{suffix}");
    match spec.kind {
        LayerKind::Dense { width } => {
            if width == 0 {
                return Err(CoreError::config(format!("{prefix}.{idx}: dense width must be positive")));
            }
            let n_in = in_shape.flat();
            out.push((vec![width, n_in], name("w")));
            out.push((vec![width], name("b")));
            if spec.layer_norm {
                out.push((vec![width], name("lng")));
                out.push((vec![width], name("lnb")));
            }
            Ok(Shape { c: 1, l: width })
        }
        LayerKind::Conv1d { channels, kernel } => {
            check_kernel(kernel, prefix, idx)?;
            if channels == 0 {
                return Err(CoreError::config(format!("{prefix}.{idx}: conv channels must be positive")));
            }
            out.push((vec![channels, in_shape.c, kernel], name("w")));
            out.push((vec![channels], name("b")));
            let shape = Shape { c: channels, l: in_shape.l };
            if spec.layer_norm {
                out.push((vec![shape.flat()], name("lng")));
                out.push((vec![shape.flat()], name("lnb")));
            }
            Ok(shape)
        }
        LayerKind::Residual { kernel } => {
            check_kernel(kernel, prefix, idx)?;
            let c = in_shape.c;
            let flat = in_shape.flat();
            out.push((vec![c, c, kernel], name("w1")));
            out.push((vec![c], name("b1")));
            if spec.layer_norm {
                out.push((vec![flat], name("lng1")));
                out.push((vec![flat], name("lnb1")));
            }
            out.push((vec![c, c, kernel], name("w2")));
            out.push((vec![c], name("b2")));
            if spec.layer_norm {
                out.push((vec![flat], name("lng2")));
                out.push((vec![flat], name("lnb2")));
            }
            Ok(in_shape)
        }
    }
}

fn check_kernel(kernel: usize, prefix: &str, idx: usize) -> Result<()> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(CoreError::config(format!(
            "{prefix}.{idx}: kernel must be odd and positive, got {kernel}"
        )));
    }
    Ok(())
}

fn build_plan(spec: &NetworkSpec) -> Result<NetPlan> {
    if spec.input_dim == 0 {
        return Err(CoreError::config("input_dim must be positive"));
    }
    let mut arrays = Vec::new();
    let mut shape = Shape { c: 1, l: spec.input_dim };
    let mut body = Vec::new();
    for (i, l) in spec.body.iter().enumerate() {
        let first = arrays.len();
        let out_shape = arrays_for_layer(l, shape, "body", i, &mut arrays)?;
        body.push(LayerPlan { spec: *l, in_shape: shape, out_shape, first });
        shape = out_shape;
    }
    let body_shape = shape;
    let body_range = (0, arrays.len());
    let mut heads = Vec::new();
    let mut head_ranges = Vec::new();
    let mut out_shape = body_shape;
    for (h, layers) in spec.heads.iter().enumerate() {
        let start = arrays.len();
        let mut hshape = body_shape;
        let mut plans = Vec::new();
        for (i, l) in layers.iter().enumerate() {
            let first = arrays.len();
            let prefix = format!("head{h}");
            let out = arrays_for_layer(l, hshape, &prefix, i, &mut arrays)?;
            plans.push(LayerPlan { spec: *l, in_shape: hshape, out_shape: out, first });
            hshape = out;
        }
        if h == 0 {
            out_shape = hshape;
        } else if hshape.flat() != out_shape.flat() {
            return Err(CoreError::config(format!(
                "head{h} output width {} differs from head0 width {}",
                hshape.flat(),
                out_shape.flat()
            )));
        }
        heads.push(plans);
        head_ranges.push((start, arrays.len()));
    }
    Ok(NetPlan { body, heads, body_shape, out_shape, arrays, body_range, head_ranges })
}

/// A validated network: spec plus precomputed shapes and array layout.
#[derive(Debug, Clone)]
pub struct Net {
    spec: NetworkSpec,
    plan: NetPlan,
}

impl Net {
    pub fn new(spec: NetworkSpec) -> Result<Net> {
        let plan = build_plan(&spec)?;
        Ok(Net { spec, plan })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn out_dim(&self) -> usize {
        self.plan.out_shape.flat()
    }

    pub fn n_heads(&self) -> usize {
        self.plan.heads.len()
    }

    pub fn n_arrays(&self) -> usize {
        self.plan.arrays.len()
    }

    pub fn array_names(&self) -> Vec<&str> {
        self.plan.arrays.iter().map(|(_, n)| n.as_str()).collect()
    }

    /// Array indices belonging to the shared body plus the given head.
    /// For a headless network this is every array.
    pub fn arrays_for_head(&self, head: Option<usize>) -> Vec<usize> {
        let mut ids: Vec<usize> = (self.plan.body_range.0..self.plan.body_range.1).collect();
        if let Some(h) = head {
            let (a, b) = self.plan.head_ranges[h];
            ids.extend(a..b);
        }
        ids
    }

    /// Glorot-uniform weight init (biases zero, layer-norm gain one).
    /// `final_gain` scales the weights and bias of each output layer; actors
    /// pass 1e-3 so initial actions sit near the center of the action box.
    pub fn init<S: Scalar>(&self, seed: u64, final_gain: f64) -> NetworkParams<S> {
        let mut rng = SplitMix64::new(seed);
        let mut arrays = Vec::with_capacity(self.plan.arrays.len());
        for (dims, name) in &self.plan.arrays {
            let n: usize = dims.iter().product();
            let data = if name.ends_with(".w")
                || name.ends_with(".w1")
                || name.ends_with(".w2")
            {
                let (fan_in, fan_out) = match dims.len() {
                    2 => (dims[1], dims[0]),
                    3 => (dims[1] * dims[2], dims[0] * dims[2]),
                    _ => unreachable!("weights are rank 2 or 3"),
                };
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| S::c(rng.uniform(-bound, bound))).collect()
            } else if name.ends_with(".lng") || name.ends_with(".lng1") || name.ends_with(".lng2") {
                vec![S::one(); n]
            } else {
                vec![S::zero(); n]
            };
            arrays.push(ParamArray { name: name.clone(), dims: dims.clone(), data });
        }
        if final_gain != 1.0 {
            for ids in self.output_layer_arrays() {
                for idx in ids {
                    let arr = &mut arrays[idx];
                    if arr.name.contains(".w") || arr.name.contains(".b") {
                        for v in arr.data.iter_mut() {
                            *v *= S::c(final_gain);
                        }
                    }
                }
            }
        }
        NetworkParams { version: 0, arrays }
    }

    /// Array indices of the last layer of each output branch.
    fn output_layer_arrays(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        if self.plan.heads.is_empty() {
            if let Some(last) = self.plan.body.last() {
                out.push(self.layer_array_ids(last));
            }
        } else {
            for (h, head) in self.plan.heads.iter().enumerate() {
                match head.last() {
                    Some(last) => out.push(self.layer_array_ids(last)),
                    // Empty head: the body's last layer is the output layer.
                    None => {
                        if h == 0 {
                            if let Some(last) = self.plan.body.last() {
                                out.push(self.layer_array_ids(last));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn layer_array_ids(&self, lp: &LayerPlan) -> Vec<usize> {
        (lp.first..lp.first + layer_array_count(&lp.spec)).collect()
    }

    /// Builds typed params from checkpoint arrays, validating names and dims.
    pub fn params_from_arrays<S: Scalar>(
        &self,
        version: u64,
        arrays: &[ParamArray<f32>],
    ) -> Result<NetworkParams<S>> {
        let mut out = Vec::with_capacity(self.plan.arrays.len());
        for (dims, name) in &self.plan.arrays {
            let found = arrays
                .iter()
                .find(|a| &a.name == name)
                .ok_or_else(|| CoreError::config(format!("missing array {name}")))?;
            if &found.dims != dims {
                return Err(CoreError::config(format!(
                    "array {name}: expected dims {dims:?}, got {:?}",
                    found.dims
                )));
            }
            out.push(ParamArray {
                name: name.clone(),
                dims: dims.clone(),
                data: found.data.iter().map(|&v| S::c(v as f64)).collect(),
            });
        }
        Ok(NetworkParams { version, arrays: out })
    }

    pub fn zero_grads<S: Scalar>(&self) -> Gradients<S> {
        Gradients {
            arrays: vec![Vec::new(); self.plan.arrays.len()],
            input: vec![S::zero(); self.spec.input_dim],
        }
    }

    fn resolve_head(&self, head: Option<usize>) -> Result<Option<usize>> {
        match (head, self.plan.heads.len()) {
            (None, 0) => Ok(None),
            (None, 1) => Ok(Some(0)),
            (None, k) => Err(CoreError::config(format!("network has {k} heads, head index required"))),
            (Some(_), 0) => Err(CoreError::config("network has no heads")),
            (Some(h), k) => {
                if h < k {
                    Ok(Some(h))
                } else {
                    Err(CoreError::config(format!("head {h} out of range ({k} heads)")))
                }
            }
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        params: &NetworkParams<S>,
        input: &[S],
        head: Option<usize>,
    ) -> Result<Vec<S>> {
        self.check_params(params, input)?;
        let head = self.resolve_head(head)?;
        let mut x = input.to_vec();
        for lp in &self.plan.body {
            x = layer_forward(lp, params, &x).y;
        }
        if let Some(h) = head {
            for lp in &self.plan.heads[h] {
                x = layer_forward(lp, params, &x).y;
            }
        }
        Ok(x)
    }

    /// One body pass, then every head branch. Requires at least one head.
    pub fn forward_all_heads<S: Scalar>(
        &self,
        params: &NetworkParams<S>,
        input: &[S],
    ) -> Result<Vec<Vec<S>>> {
        self.check_params(params, input)?;
        if self.plan.heads.is_empty() {
            return Err(CoreError::config("forward_all_heads requires a headed network"));
        }
        let mut x = input.to_vec();
        for lp in &self.plan.body {
            x = layer_forward(lp, params, &x).y;
        }
        let mut outs = Vec::with_capacity(self.plan.heads.len());
        for head in &self.plan.heads {
            let mut h = x.clone();
            for lp in head {
                h = layer_forward(lp, params, &h).y;
            }
            outs.push(h);
        }
        Ok(outs)
    }

    /// Analytic gradients of `upstream . output` with respect to every
    /// parameter on the body+head path and to the input.
    pub fn backward<S: Scalar>(
        &self,
        params: &NetworkParams<S>,
        input: &[S],
        head: Option<usize>,
        upstream: &[S],
    ) -> Result<Gradients<S>> {
        let mut grads = self.zero_grads();
        self.backward_impl(params, input, head, upstream, true, &mut grads)?;
        Ok(grads)
    }

    /// Accumulating variant for batch loops.
    pub fn backward_into<S: Scalar>(
        &self,
        params: &NetworkParams<S>,
        input: &[S],
        head: Option<usize>,
        upstream: &[S],
        grads: &mut Gradients<S>,
    ) -> Result<()> {
        self.backward_impl(params, input, head, upstream, true, grads)
    }

    /// Gradient with respect to the input only; parameter gradients are not
    /// computed. Used for the policy-gradient chain through a critic.
    pub fn input_gradient<S: Scalar>(
        &self,
        params: &NetworkParams<S>,
        input: &[S],
        head: Option<usize>,
        upstream: &[S],
    ) -> Result<Vec<S>> {
        let mut grads = Gradients {
            arrays: vec![Vec::new(); self.plan.arrays.len()],
            input: vec![S::zero(); self.spec.input_dim],
        };
        self.backward_impl(params, input, head, upstream, false, &mut grads)?;
        Ok(grads.input)
    }

    fn backward_impl<S: Scalar>(
        &self,
        params: &NetworkParams<S>,
        input: &[S],
        head: Option<usize>,
        upstream: &[S],
        want_params: bool,
        grads: &mut Gradients<S>,
    ) -> Result<()> {
        self.check_params(params, input)?;
        let head = self.resolve_head(head)?;
        if upstream.len() != self.out_dim() {
            return Err(CoreError::config(format!(
                "upstream gradient has {} elements, output has {}",
                upstream.len(),
                self.out_dim()
            )));
        }
        if grads.arrays.len() != self.plan.arrays.len() {
            return Err(CoreError::config("gradient buffer does not match network layout"));
        }

        // Forward pass, caching every intermediate.
        let mut caches: Vec<Cache<S>> = Vec::new();
        let mut x = input.to_vec();
        for lp in &self.plan.body {
            let cache = layer_forward(lp, params, &x);
            x = cache.y.clone();
            caches.push(cache);
        }
        if let Some(h) = head {
            for lp in &self.plan.heads[h] {
                let cache = layer_forward(lp, params, &x);
                x = cache.y.clone();
                caches.push(cache);
            }
        }

        // Backward pass in reverse layer order.
        let path: Vec<&LayerPlan> = self
            .plan
            .body
            .iter()
            .chain(head.into_iter().flat_map(|h| self.plan.heads[h].iter()))
            .collect();
        let mut g = upstream.to_vec();
        for (lp, cache) in path.iter().zip(caches.iter()).rev() {
            g = layer_backward(lp, params, cache, &g, want_params, grads)?;
        }
        for (i, v) in g.iter().enumerate() {
            grads.input[i] += *v;
        }
        Ok(())
    }

    fn check_params<S: Scalar>(&self, params: &NetworkParams<S>, input: &[S]) -> Result<()> {
        if input.len() != self.spec.input_dim {
            return Err(CoreError::config(format!(
                "input has {} elements, expected {}",
                input.len(),
                self.spec.input_dim
            )));
        }
        if params.arrays.len() != self.plan.arrays.len() {
            return Err(CoreError::config(format!(
                "params have {} arrays, network needs {}",
                params.arrays.len(),
                self.plan.arrays.len()
            )));
        }
        Ok(())
    }
}

fn layer_array_count(spec: &LayerSpec) -> usize {
    match spec.kind {
        LayerKind::Dense { .. } | LayerKind::Conv1d { .. } => {
            if spec.layer_norm {
                4
            } else {
                2
            }
        }
        LayerKind::Residual { .. } => {
            if spec.layer_norm {
                8
            } else {
                4
            }
        }
    }
}

/// Intermediates for one layer; `pre` is the post-norm pre-activation vector.
struct Cache<S> {
    x: Vec<S>,
    ln: Option<LnCache<S>>,
    pre: Vec<S>,
    y: Vec<S>,
    // residual-only second stage
    h1: Vec<S>,
    ln2: Option<LnCache<S>>,
    sum_pre: Vec<S>,
}

fn layer_forward<S: Scalar>(lp: &LayerPlan, params: &NetworkParams<S>, x: &[S]) -> Cache<S> {
    let a = lp.first;
    let arr = |i: usize| params.arrays[a + i].data.as_slice();
    match lp.spec.kind {
        LayerKind::Dense { width } => {
            let z = layers::dense_forward(arr(0), arr(1), x, width, lp.in_shape.flat());
            finish_simple(lp, params, x, z)
        }
        LayerKind::Conv1d { channels, kernel } => {
            let z = layers::conv1d_forward(
                arr(0),
                arr(1),
                x,
                lp.in_shape.c,
                channels,
                lp.in_shape.l,
                kernel,
            );
            finish_simple(lp, params, x, z)
        }
        LayerKind::Residual { kernel } => {
            let c = lp.in_shape.c;
            let l = lp.in_shape.l;
            let ln_offset = if lp.spec.layer_norm { 2 } else { 0 };
            let z1 = layers::conv1d_forward(arr(0), arr(1), x, c, c, l, kernel);
            let (pre1, ln1) = if lp.spec.layer_norm {
                let (p, c1) = layers::layer_norm_forward(&z1, arr(2), arr(3));
                (p, Some(c1))
            } else {
                (z1, None)
            };
            let h1: Vec<S> = pre1.iter().map(|&v| lp.spec.activation.apply(v)).collect();
            let w2 = 2 + ln_offset;
            let z2 = layers::conv1d_forward(arr(w2), arr(w2 + 1), &h1, c, c, l, kernel);
            let (pre2, ln2) = if lp.spec.layer_norm {
                let (p, c2) = layers::layer_norm_forward(&z2, arr(w2 + 2), arr(w2 + 3));
                (p, Some(c2))
            } else {
                (z2, None)
            };
            let sum_pre: Vec<S> = pre2.iter().zip(x.iter()).map(|(&p, &xi)| p + xi).collect();
            let y: Vec<S> = sum_pre.iter().map(|&v| lp.spec.activation.apply(v)).collect();
            Cache {
                x: x.to_vec(),
                ln: ln1,
                pre: pre1,
                y,
                h1,
                ln2,
                sum_pre,
            }
        }
    }
}

fn finish_simple<S: Scalar>(
    lp: &LayerPlan,
    params: &NetworkParams<S>,
    x: &[S],
    z: Vec<S>,
) -> Cache<S> {
    let a = lp.first;
    let (pre, ln) = if lp.spec.layer_norm {
        let (p, c) = layers::layer_norm_forward(
            &z,
            &params.arrays[a + 2].data,
            &params.arrays[a + 3].data,
        );
        (p, Some(c))
    } else {
        (z, None)
    };
    let y: Vec<S> = pre.iter().map(|&v| lp.spec.activation.apply(v)).collect();
    Cache {
        x: x.to_vec(),
        ln,
        pre,
        y,
        h1: Vec::new(),
        ln2: None,
        sum_pre: Vec::new(),
    }
}

fn ensure_grad<S: Scalar>(grads: &mut Gradients<S>, idx: usize, len: usize) {
    if grads.arrays[idx].is_empty() {
        grads.arrays[idx] = vec![S::zero(); len];
    }
}

fn layer_backward<S: Scalar>(
    lp: &LayerPlan,
    params: &NetworkParams<S>,
    cache: &Cache<S>,
    g_out: &[S],
    want_params: bool,
    grads: &mut Gradients<S>,
) -> Result<Vec<S>> {
    let a = lp.first;
    match lp.spec.kind {
        LayerKind::Dense { width } => {
            let mut da: Vec<S> = g_out
                .iter()
                .zip(cache.pre.iter().zip(cache.y.iter()))
                .map(|(&g, (&p, &y))| g * lp.spec.activation.derivative(p, y))
                .collect();
            if let Some(ln) = &cache.ln {
                da = ln_backward_step(lp, params, ln, &da, want_params, grads, 2, 3)?;
            }
            let n_in = lp.in_shape.flat();
            let mut dx = vec![S::zero(); n_in];
            if want_params {
                ensure_grad(grads, a, width * n_in);
                ensure_grad(grads, a + 1, width);
                let (left, right) = grads.arrays.split_at_mut(a + 1);
                layers::dense_backward(
                    &params.arrays[a].data,
                    &cache.x,
                    &da,
                    width,
                    n_in,
                    &mut left[a],
                    &mut right[0],
                    &mut dx,
                );
            } else {
                dense_input_grad(&params.arrays[a].data, &da, width, n_in, &mut dx);
            }
            Ok(dx)
        }
        LayerKind::Conv1d { channels, kernel } => {
            let mut da: Vec<S> = g_out
                .iter()
                .zip(cache.pre.iter().zip(cache.y.iter()))
                .map(|(&g, (&p, &y))| g * lp.spec.activation.derivative(p, y))
                .collect();
            if let Some(ln) = &cache.ln {
                da = ln_backward_step(lp, params, ln, &da, want_params, grads, 2, 3)?;
            }
            let (c_in, l) = (lp.in_shape.c, lp.in_shape.l);
            let mut dx = vec![S::zero(); c_in * l];
            if want_params {
                ensure_grad(grads, a, channels * c_in * kernel);
                ensure_grad(grads, a + 1, channels);
                let (left, right) = grads.arrays.split_at_mut(a + 1);
                layers::conv1d_backward(
                    &params.arrays[a].data,
                    &cache.x,
                    &da,
                    c_in,
                    channels,
                    l,
                    kernel,
                    &mut left[a],
                    &mut right[0],
                    &mut dx,
                );
            } else {
                conv_input_grad(&params.arrays[a].data, &da, c_in, channels, l, kernel, &mut dx);
            }
            Ok(dx)
        }
        LayerKind::Residual { kernel } => {
            let c = lp.in_shape.c;
            let l = lp.in_shape.l;
            let ln_offset = if lp.spec.layer_norm { 2 } else { 0 };
            let w2 = 2 + ln_offset;
            // y = act(sum_pre), sum_pre = pre2 + x
            let ds: Vec<S> = g_out
                .iter()
                .zip(cache.sum_pre.iter().zip(cache.y.iter()))
                .map(|(&g, (&p, &y))| g * lp.spec.activation.derivative(p, y))
                .collect();
            let mut dpre2 = ds.clone();
            if let Some(ln2) = &cache.ln2 {
                dpre2 = ln_backward_step(lp, params, ln2, &dpre2, want_params, grads, w2 + 2, w2 + 3)?;
            }
            let mut dh1 = vec![S::zero(); c * l];
            if want_params {
                ensure_grad(grads, a + w2, c * c * kernel);
                ensure_grad(grads, a + w2 + 1, c);
                let (left, right) = grads.arrays.split_at_mut(a + w2 + 1);
                layers::conv1d_backward(
                    &params.arrays[a + w2].data,
                    &cache.h1,
                    &dpre2,
                    c,
                    c,
                    l,
                    kernel,
                    &mut left[a + w2],
                    &mut right[0],
                    &mut dh1,
                );
            } else {
                conv_input_grad(&params.arrays[a + w2].data, &dpre2, c, c, l, kernel, &mut dh1);
            }
            let mut da1: Vec<S> = dh1
                .iter()
                .zip(cache.pre.iter().zip(cache.h1.iter()))
                .map(|(&g, (&p, &h))| g * lp.spec.activation.derivative(p, h))
                .collect();
            if let Some(ln1) = &cache.ln {
                da1 = ln_backward_step(lp, params, ln1, &da1, want_params, grads, 2, 3)?;
            }
            let mut dx = vec![S::zero(); c * l];
            if want_params {
                ensure_grad(grads, a, c * c * kernel);
                ensure_grad(grads, a + 1, c);
                let (left, right) = grads.arrays.split_at_mut(a + 1);
                layers::conv1d_backward(
                    &params.arrays[a].data,
                    &cache.x,
                    &da1,
                    c,
                    c,
                    l,
                    kernel,
                    &mut left[a],
                    &mut right[0],
                    &mut dx,
                );
            } else {
                conv_input_grad(&params.arrays[a].data, &da1, c, c, l, kernel, &mut dx);
            }
            // Skip connection contributes directly.
            for i in 0..dx.len() {
                dx[i] += ds[i];
            }
            Ok(dx)
        }
    }
}

fn ln_backward_step<S: Scalar>(
    lp: &LayerPlan,
    params: &NetworkParams<S>,
    ln: &LnCache<S>,
    da: &[S],
    want_params: bool,
    grads: &mut Gradients<S>,
    gain_off: usize,
    offset_off: usize,
) -> Result<Vec<S>> {
    let a = lp.first;
    let n = da.len();
    let mut dz = vec![S::zero(); n];
    if want_params {
        ensure_grad(grads, a + gain_off, n);
        ensure_grad(grads, a + offset_off, n);
        let (left, right) = grads.arrays.split_at_mut(a + offset_off);
        layers::layer_norm_backward(
            ln,
            &params.arrays[a + gain_off].data,
            da,
            &mut left[a + gain_off],
            &mut right[0],
            &mut dz,
        );
    } else {
        let mut dgain = vec![S::zero(); n];
        let mut doffset = vec![S::zero(); n];
        layers::layer_norm_backward(
            ln,
            &params.arrays[a + gain_off].data,
            da,
            &mut dgain,
            &mut doffset,
            &mut dz,
        );
    }
    Ok(dz)
}

fn dense_input_grad<S: Scalar>(w: &[S], g: &[S], n_out: usize, n_in: usize, dx: &mut [S]) {
    for o in 0..n_out {
        let go = g[o];
        let row = &w[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            dx[i] += go * row[i];
        }
    }
}

fn conv_input_grad<S: Scalar>(
    w: &[S],
    g: &[S],
    c_in: usize,
    c_out: usize,
    l: usize,
    k: usize,
    dx: &mut [S],
) {
    let pad = (k - 1) / 2;
    for co in 0..c_out {
        let grow = &g[co * l..(co + 1) * l];
        for ci in 0..c_in {
            let dxrow = &mut dx[ci * l..(ci + 1) * l];
            let wrow = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
            for j in 0..k {
                let t_lo = pad.saturating_sub(j);
                let t_hi = (l + pad).saturating_sub(j).min(l);
                for t in t_lo..t_hi {
                    dxrow[t + j - pad] += grow[t] * wrow[j];
                }
            }
        }
    }
}

/// target = tau * online + (1 - tau) * target, elementwise.
pub fn soft_update<S: Scalar>(
    target: &mut NetworkParams<S>,
    online: &NetworkParams<S>,
    tau: f64,
) -> Result<()> {
    soft_update_selected(target, online, tau, |_| true)
}

/// Soft update restricted to a subset of arrays (shared body plus one head).
pub fn soft_update_selected<S: Scalar>(
    target: &mut NetworkParams<S>,
    online: &NetworkParams<S>,
    tau: f64,
    select: impl Fn(usize) -> bool,
) -> Result<()> {
    if target.arrays.len() != online.arrays.len() {
        return Err(CoreError::config("soft_update: mismatched array counts"));
    }
    let t = S::c(tau);
    let one_minus = S::c(1.0 - tau);
    for (i, (ta, oa)) in target.arrays.iter_mut().zip(online.arrays.iter()).enumerate() {
        if !select(i) {
            continue;
        }
        if ta.data.len() != oa.data.len() {
            return Err(CoreError::config(format!("soft_update: array {} size mismatch", oa.name)));
        }
        for (tv, ov) in ta.data.iter_mut().zip(oa.data.iter()) {
            *tv = t * *ov + one_minus * *tv;
        }
    }
    Ok(())
}

/// Additive Gaussian noise on every parameter array (weights, biases and
/// layer-norm gains/offsets alike, one shared scale). Returns a perturbed
/// copy; the original is untouched. sigma = 0 reproduces the input exactly.
pub fn perturb_parameters<S: Scalar>(
    params: &NetworkParams<S>,
    sigma: f64,
    rng: &mut SplitMix64,
) -> NetworkParams<S> {
    let mut out = params.clone();
    for arr in out.arrays.iter_mut() {
        for v in arr.data.iter_mut() {
            *v += S::c(sigma * rng.normal());
        }
    }
    out
}

/// Multiplicative step rule for the parameter-noise scale: grow by 1% while
/// the measured action deviation is below target, shrink by 1% otherwise.
pub fn adapt_param_noise_sigma(sigma: f64, measured: f64, target: f64) -> f64 {
    if measured < target {
        sigma * 1.01
    } else {
        sigma / 1.01
    }
}
