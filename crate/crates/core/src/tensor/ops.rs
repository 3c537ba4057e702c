use super::Tensor;
use crate::error::{Error, Result};

/// Target value that `cross_entropy` skips.
pub const IGNORE_INDEX: usize = usize::MAX;

fn dim_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

/// `b` broadcasts onto `a` when it is a single element or a trailing suffix of `a`'s shape.
fn broadcasts(a: &[usize], b: &[usize]) -> bool {
    b.iter().product::<usize>() == 1 || (b.len() <= a.len() && a[a.len() - b.len()..] == *b)
}

/// Sums a full-size gradient down to the broadcast operand's size.
fn reduce_broadcast(g: &[f64], nb: usize) -> Vec<f64> {
    let mut out = vec![0.0; nb];
    for (i, v) in g.iter().enumerate() {
        out[i % nb] += v;
    }
    out
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

// c[m,n] = a[m,k] . b[k,n]
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

// out[m,k] = g[m,n] . b[k,n]^T
fn mm_bt(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

// out[k,n] = a[m,k]^T . g[m,n]
fn mm_at(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Moves `src` (laid out as `shape`) into the order given by `perm`.
fn permute_data(src: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut out = vec![0.0; src.len()];
    let mut idx = vec![0usize; shape.len()];
    for o in out.iter_mut() {
        let off: usize = idx.iter().zip(perm).map(|(&i, &p)| i * in_strides[p]).sum();
        *o = src[off];
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

fn check_finite(op: &'static str, x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericInput(op))
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Tensor {
    fn binary_broadcast(
        &self,
        other: &Tensor,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        da: fn(f64, f64) -> f64,
        db: fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if !broadcasts(self.shape(), other.shape()) {
            return Err(dim_err(op, self.shape(), other.shape()));
        }
        let nb = other.numel();
        let data: Vec<f64> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, other.data()[i % nb]))
            .collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(self.shape().to_vec(), data, &[self, other], move |g| {
            let ad = a.data();
            let bd = b.data();
            let ga = a.requires_grad().then(|| {
                g.iter()
                    .enumerate()
                    .map(|(i, gv)| gv * da(ad[i], bd[i % nb]))
                    .collect()
            });
            let gb = b.requires_grad().then(|| {
                let full: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(i, gv)| gv * db(ad[i], bd[i % nb]))
                    .collect();
                reduce_broadcast(&full, nb)
            });
            vec![ga, gb]
        }))
    }

    /// Elementwise sum; either operand may broadcast onto the other.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if !broadcasts(self.shape(), other.shape()) && broadcasts(other.shape(), self.shape()) {
            return other.add(self);
        }
        self.binary_broadcast(other, "add", |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_broadcast(other, "sub", |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    /// Elementwise product; either operand may broadcast onto the other.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        if !broadcasts(self.shape(), other.shape()) && broadcasts(other.shape(), self.shape()) {
            return other.mul(self);
        }
        self.binary_broadcast(other, "mul", |x, y| x * y, |_, y| y, |x, _| x)
    }

    fn unary(&self, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let x = self.clone();
        let y = data.clone();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |g| {
            let gx = g
                .iter()
                .zip(x.data())
                .zip(&y)
                .map(|((gv, &xv), &yv)| gv * df(xv, yv))
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|x| x * c).collect();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |g| {
            vec![Some(g.iter().map(|v| v * c).collect())]
        })
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, |_, y| y)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self) -> Tensor {
        self.unary(
            |x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            |x, _| {
                let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            },
        )
    }

    /// log sigma(x), evaluated without overflow.
    pub fn log_sigmoid(&self) -> Tensor {
        self.unary(
            |x| x.min(0.0) - (-x.abs()).exp().ln_1p(),
            |x, _| {
                // sigma(-x)
                if x >= 0.0 {
                    let e = (-x).exp();
                    e / (1.0 + e)
                } else {
                    1.0 / (1.0 + x.exp())
                }
            },
        )
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![], vec![s], &[self], move |g| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        self.sum().scale(1.0 / n as f64)
    }

    /// `[M,K] x [K,N] -> [M,N]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(dim_err("matmul", a, b));
        }
        let a3 = self.reshape(&[1, a[0], a[1]])?;
        let b3 = other.reshape(&[1, b[0], b[1]])?;
        a3.bmm(&b3)?.reshape(&[a[0], b[1]])
    }

    /// Batched product `[B,M,K] x [B,K,N] -> [B,M,N]`.
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(dim_err("bmm", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut data = Vec::with_capacity(bs * m * n);
        for bi in 0..bs {
            let ab = &self.data()[bi * m * k..(bi + 1) * m * k];
            let bb = &other.data()[bi * k * n..(bi + 1) * k * n];
            data.extend(mm(ab, bb, m, k, n));
        }
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(vec![bs, m, n], data, &[self, other], move |g| {
            let ga = a.requires_grad().then(|| {
                let mut out = Vec::with_capacity(bs * m * k);
                for bi in 0..bs {
                    let gb = &g[bi * m * n..(bi + 1) * m * n];
                    let bb = &b.data()[bi * k * n..(bi + 1) * k * n];
                    out.extend(mm_bt(gb, bb, m, k, n));
                }
                out
            });
            let gbv = b.requires_grad().then(|| {
                let mut out = Vec::with_capacity(bs * k * n);
                for bi in 0..bs {
                    let gb = &g[bi * m * n..(bi + 1) * m * n];
                    let ab = &a.data()[bi * m * k..(bi + 1) * m * k];
                    out.extend(mm_at(ab, gb, m, k, n));
                }
                out
            });
            vec![ga, gbv]
        }))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape(format!(
                "invalid permutation {perm:?} for shape {:?}",
                self.shape()
            )));
        }
        let shape = self.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let data = permute_data(self.data(), &shape, perm);
        let mut inverse = vec![0; nd];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let out_shape_c = out_shape.clone();
        Ok(Tensor::from_op(out_shape, data, &[self], move |g| {
            vec![Some(permute_data(g, &out_shape_c, &inverse))]
        }))
    }

    /// Swaps two axes.
    pub fn transpose(&self, d0: usize, d1: usize) -> Result<Tensor> {
        let mut perm: Vec<usize> = (0..self.ndim()).collect();
        if d0 >= perm.len() || d1 >= perm.len() {
            return Err(Error::Shape(format!(
                "transpose axes ({d0},{d1}) out of range for {:?}",
                self.shape()
            )));
        }
        perm.swap(d0, d1);
        self.permute(&perm)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(dim_err("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), &[self], |g| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        if axis >= self.ndim() || start >= end || end > self.shape()[axis] {
            return Err(Error::Shape(format!(
                "slice {start}..{end} on axis {axis} of {:?}",
                self.shape()
            )));
        }
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let w = end - start;
        let mut data = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&self.data()[base + start * inner..base + end * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = w;
        let n = self.numel();
        Ok(Tensor::from_op(shape, data, &[self], move |g| {
            let mut out = vec![0.0; n];
            for o in 0..outer {
                let base = o * len * inner;
                out[base + start * inner..base + end * inner]
                    .copy_from_slice(&g[o * w * inner..(o + 1) * w * inner]);
            }
            vec![Some(out)]
        }))
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        if axis >= first.ndim() {
            return Err(Error::Shape(format!("concat axis {axis} for {:?}", first.shape())));
        }
        for p in parts {
            let ok = p.ndim() == first.ndim()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(dim_err("concat", first.shape(), p.shape()));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                data.extend_from_slice(&p.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let refs: Vec<&Tensor> = parts.iter().collect();
        let flags: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
        Ok(Tensor::from_op(shape, data, &refs, move |g| {
            let mut outs: Vec<Vec<f64>> = lens.iter().map(|l| Vec::with_capacity(outer * l * inner)).collect();
            for o in 0..outer {
                let mut off = o * total * inner;
                for (out, &l) in outs.iter_mut().zip(&lens) {
                    out.extend_from_slice(&g[off..off + l * inner]);
                    off += l * inner;
                }
            }
            outs.into_iter().zip(&flags).map(|(v, &f)| f.then_some(v)).collect()
        }))
    }

    /// Softmax along `axis`, stabilized by max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.ndim() {
            return Err(Error::Shape(format!("softmax axis {axis} for {:?}", self.shape())));
        }
        check_finite("softmax", self.data())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let mx = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for j in 0..len {
                    let e = (x[at(j)] - mx).exp();
                    y[at(j)] = e;
                    s += e;
                }
                for j in 0..len {
                    y[at(j)] /= s;
                }
            }
        }
        let yc = y.clone();
        Ok(Tensor::from_op(self.shape().to_vec(), y, &[self], move |g| {
            let mut gx = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * len * inner + j * inner + i;
                    let dot: f64 = (0..len).map(|j| g[at(j)] * yc[at(j)]).sum();
                    for j in 0..len {
                        gx[at(j)] = yc[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// `(x - mean) / sqrt(var + eps) * gain + bias` over the last axis.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *self.shape().last().ok_or_else(|| Error::Shape("layer_norm on a scalar".into()))?;
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(dim_err("layer_norm", self.shape(), gain.shape()));
        }
        let rows = self.numel() / d;
        let x = self.data();
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = vec![0.0; rows];
        let mut y = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mu) * rs;
                xhat[r * d + j] = h;
                y[r * d + j] = h * gain.data()[j] + bias.data()[j];
            }
        }
        let (xt, gt, bt) = (self.clone(), gain.clone(), bias.clone());
        Ok(Tensor::from_op(self.shape().to_vec(), y, &[self, gain, bias], move |g| {
            let gd = gt.data();
            let gx = xt.requires_grad().then(|| {
                let mut out = vec![0.0; g.len()];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let dh: Vec<f64> = gr.iter().zip(gd).map(|(a, b)| a * b).collect();
                    let m1 = dh.iter().sum::<f64>() / d as f64;
                    let m2 = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        out[r * d + j] = rstd[r] * (dh[j] - m1 - hr[j] * m2);
                    }
                }
                out
            });
            let ggain = gt.requires_grad().then(|| {
                let mut out = vec![0.0; d];
                for (i, gv) in g.iter().enumerate() {
                    out[i % d] += gv * xhat[i];
                }
                out
            });
            let gbias = bt.requires_grad().then(|| reduce_broadcast(g, d));
            vec![gx, ggain, gbias]
        }))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&self, target: &Tensor) -> Result<Tensor> {
        if self.shape() != target.shape() {
            return Err(dim_err("mse", self.shape(), target.shape()));
        }
        let n = self.numel() as f64;
        let diff: Vec<f64> = self.data().iter().zip(target.data()).map(|(a, b)| a - b).collect();
        let v = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let (a, b) = (self.clone(), target.clone());
        Ok(Tensor::from_op(vec![], vec![v], &[self, target], move |g| {
            let s = 2.0 * g[0] / n;
            let ga = a.requires_grad().then(|| diff.iter().map(|d| s * d).collect());
            let gb = b.requires_grad().then(|| diff.iter().map(|d| -s * d).collect());
            vec![ga, gb]
        }))
    }

    /// Divides each row of `[N,D]` by its Euclidean norm.
    pub fn l2_normalize_rows(&self) -> Result<Tensor> {
        if self.ndim() != 2 {
            return Err(Error::Shape(format!("l2_normalize_rows on {:?}", self.shape())));
        }
        let (n, d) = (self.shape()[0], self.shape()[1]);
        let x = self.data();
        let mut norms = vec![0.0; n];
        let mut y = vec![0.0; x.len()];
        for r in 0..n {
            let row = &x[r * d..(r + 1) * d];
            let nr = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nr == 0.0 || !nr.is_finite() {
                return Err(Error::Normalization(r));
            }
            norms[r] = nr;
            for j in 0..d {
                y[r * d + j] = row[j] / nr;
            }
        }
        let yc = y.clone();
        Ok(Tensor::from_op(vec![n, d], y, &[self], move |g| {
            let mut gx = vec![0.0; g.len()];
            for r in 0..n {
                let gr = &g[r * d..(r + 1) * d];
                let yr = &yc[r * d..(r + 1) * d];
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for j in 0..d {
                    gx[r * d + j] = (gr[j] - yr[j] * dot) / norms[r];
                }
            }
            vec![Some(gx)]
        }))
    }
}

/// Rows of `table[V,D]` selected by `ids`, giving `[L,D]`.
pub fn embedding(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    if table.ndim() != 2 {
        return Err(Error::Shape(format!("embedding table shape {:?}", table.shape())));
    }
    if ids.is_empty() {
        return Err(Error::Shape("embedding lookup with no ids".into()));
    }
    let (v, d) = (table.shape()[0], table.shape()[1]);
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= v {
            return Err(Error::Index { index: id, size: v });
        }
        data.extend_from_slice(&table.data()[id * d..(id + 1) * d]);
    }
    let ids = ids.to_vec();
    Ok(Tensor::from_op(vec![ids.len(), d], data, &[table], move |g| {
        let mut gt = vec![0.0; v * d];
        for (r, &id) in ids.iter().enumerate() {
            for j in 0..d {
                gt[id * d + j] += g[r * d + j];
            }
        }
        vec![Some(gt)]
    }))
}

/// Mean of `-log softmax(logits)[target]` over rows whose target is not
/// `ignore_index`. All rows ignored gives 0 with a zero gradient.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], ignore_index: usize) -> Result<Tensor> {
    if logits.ndim() != 2 || logits.shape()[0] != targets.len() {
        return Err(dim_err("cross_entropy", logits.shape(), &[targets.len()]));
    }
    check_finite("cross_entropy", logits.data())?;
    let (b, v) = (logits.shape()[0], logits.shape()[1]);
    let x = logits.data();
    let mut probs = vec![0.0; b * v];
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..b {
        let t = targets[r];
        if t == ignore_index {
            continue;
        }
        if t >= v {
            return Err(Error::Index { index: t, size: v });
        }
        let row = &x[r * v..(r + 1) * v];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|z| (z - mx).exp()).sum();
        let lse = mx + s.ln();
        total += lse - row[t];
        count += 1;
        for j in 0..v {
            probs[r * v + j] = (row[j] - lse).exp();
        }
    }
    let value = if count == 0 { 0.0 } else { total / count as f64 };
    let targets = targets.to_vec();
    Ok(Tensor::from_op(vec![], vec![value], &[logits], move |g| {
        let mut gx = vec![0.0; b * v];
        if count > 0 {
            let s = g[0] / count as f64;
            for r in 0..b {
                let t = targets[r];
                if t == ignore_index {
                    continue;
                }
                for j in 0..v {
                    gx[r * v + j] = s * probs[r * v + j];
                }
                gx[r * v + t] -= s;
            }
        }
        vec![Some(gx)]
    }))
}
