//! Value-level kernels shared by the forward ops. No graph logic here.

/// Split `shape` around `axis` into (outer, axis length, inner) extents.
pub(super) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Input strides for reading `from` as if broadcast to `to` (0 on stretched axes).
fn broadcast_strides(from: &[usize], to: &[usize]) -> Vec<usize> {
    let offset = to.len() - from.len();
    let mut strides = vec![0; to.len()];
    let mut acc = 1;
    for i in (0..from.len()).rev() {
        strides[i + offset] = if from[i] == 1 { 0 } else { acc };
        acc *= from[i];
    }
    strides
}

/// Visits every multi-index of `shape` in row-major order, passing the
/// flat index into a tensor read through `strides`.
fn for_each_strided(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    let mut src = 0usize;
    for out in 0..total {
        f(out, src);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < shape[d] {
                break;
            }
            src -= strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

pub(super) fn broadcast_to(from: &[usize], data: &[f64], to: &[usize]) -> Vec<f64> {
    if from == to {
        return data.to_vec();
    }
    let strides = broadcast_strides(from, to);
    let mut out = vec![0.0; to.iter().product()];
    for_each_strided(to, &strides, |o, s| out[o] = data[s]);
    out
}

/// Sums `data` (shaped `from`) down to `to`, the inverse of [`broadcast_to`].
pub(super) fn sum_to(from: &[usize], data: &[f64], to: &[usize]) -> Vec<f64> {
    if from == to {
        return data.to_vec();
    }
    let strides = broadcast_strides(to, from);
    let mut out = vec![0.0; to.iter().product::<usize>().max(1)];
    for_each_strided(from, &strides, |o, s| out[s] += data[o]);
    out
}

pub(super) fn matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(super) fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

pub(super) fn sum_axis(shape: &[usize], data: &[f64], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for a in 0..len {
            let base = (o * len + a) * inner;
            for i in 0..inner {
                out[o * inner + i] += data[base + i];
            }
        }
    }
    out
}

/// Per-slot flat index of the maximum along `axis`; ties resolve to the first.
pub(super) fn argmax_axis(shape: &[usize], data: &[f64], axis: usize) -> Vec<usize> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let mut best = o * len * inner + i;
            for a in 1..len {
                let idx = (o * len + a) * inner + i;
                if data[idx] > data[best] {
                    best = idx;
                }
            }
            out.push(best);
        }
    }
    out
}

pub(super) fn argmax_all(data: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in data.iter().enumerate() {
        if v > data[best] {
            best = i;
        }
    }
    best
}

pub(super) fn concat(parts: &[(&[usize], &[f64])], axis: usize) -> Vec<f64> {
    let (outer, _, inner) = split_axis(parts[0].0, axis);
    let total: usize = parts.iter().map(|(_, d)| d.len()).sum();
    let mut out = Vec::with_capacity(total);
    for o in 0..outer {
        for (shape, data) in parts {
            let chunk = shape[axis] * inner;
            out.extend_from_slice(&data[o * chunk..(o + 1) * chunk]);
        }
    }
    out
}

pub(super) fn slice(shape: &[usize], data: &[f64], axis: usize, start: usize, end: usize) -> Vec<f64> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = Vec::with_capacity(outer * (end - start) * inner);
    for o in 0..outer {
        let base = o * len * inner;
        out.extend_from_slice(&data[base + start * inner..base + end * inner]);
    }
    out
}

/// `ln(1 + e^x)`, switching to `x + ln(1 + e^{-x})` above 30.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
