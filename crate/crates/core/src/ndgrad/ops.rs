//! Differentiable operations. Each op computes its forward value eagerly and
//! records a [`Function`] carrying whatever its backward rule needs.

use alloc::vec;
use alloc::vec::Vec;

use super::gemm::gemm;
use super::tape::{Function, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::math::{self, Real, EPS_NORM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `(k - 1) / 2` on every side.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch_len(&self) -> usize {
        self.k * self.k * self.cin
    }

    fn im2col(&self, x: &[Real]) -> Vec<Real> {
        let q = self.patch_len();
        let mut cols = vec![0.0; self.ho * self.wo * q];
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let row = &mut cols[(oy * self.wo + ox) * q..][..q];
                for ky in 0..self.k {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for kx in 0..self.k {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        let src = (iy as usize * self.w + ix as usize) * self.cin;
                        let dst = (ky * self.k + kx) * self.cin;
                        row[dst..dst + self.cin].copy_from_slice(&x[src..src + self.cin]);
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[Real]) -> Vec<Real> {
        let q = self.patch_len();
        let mut x = vec![0.0; self.h * self.w * self.cin];
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let row = &cols[(oy * self.wo + ox) * q..][..q];
                for ky in 0..self.k {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for kx in 0..self.k {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        let dst = (iy as usize * self.w + ix as usize) * self.cin;
                        let src = (ky * self.k + kx) * self.cin;
                        for (d, s) in x[dst..dst + self.cin].iter_mut().zip(&row[src..src + self.cin]) {
                            *d += *s;
                        }
                    }
                }
            }
        }
        x
    }
}

struct Conv2d(ConvGeom);

impl Function for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let geo = self.0;
        let (x, kernel) = (inputs[0], inputs[1]);
        let p = geo.ho * geo.wo;
        let q = geo.patch_len();
        let owned;
        let cols: &[Real] = if geo.is_pointwise() {
            x.data()
        } else {
            owned = geo.im2col(x.data());
            &owned
        };
        // dK = colsᵀ · g
        let mut dk = vec![0.0; q * geo.cout];
        gemm(q, p, geo.cout, cols, 1, q, g.data(), geo.cout, 1, &mut dk);
        // dcols = g · Kᵀ
        let mut dcols = vec![0.0; p * q];
        gemm(p, geo.cout, q, g.data(), geo.cout, 1, kernel.data(), 1, geo.cout, &mut dcols);
        let dx = if geo.is_pointwise() { dcols } else { geo.col2im(&dcols) };
        vec![
            Some(Tensor::new(x.shape(), dx).expect("conv dx")),
            Some(Tensor::new(kernel.shape(), dk).expect("conv dk")),
        ]
    }
}

struct AddBias;

impl Function for AddBias {
    fn name(&self) -> &'static str {
        "add_bias"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let c = inputs[1].len();
        let mut db = vec![0.0f64; c];
        for row in g.data().chunks_exact(c) {
            for (acc, v) in db.iter_mut().zip(row) {
                *acc += *v as f64;
            }
        }
        let db = db.into_iter().map(|v| v as Real).collect();
        vec![Some(g.clone()), Some(Tensor::new(inputs[1].shape(), db).expect("bias"))]
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl Function for Binary {
    fn name(&self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        match self {
            Binary::Add => vec![Some(g.clone()), Some(g.clone())],
            Binary::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
            Binary::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                let da = g.data().iter().zip(b.data()).map(|(g, b)| g * b).collect();
                let db = g.data().iter().zip(a.data()).map(|(g, a)| g * a).collect();
                vec![
                    Some(Tensor::new(a.shape(), da).expect("mul")),
                    Some(Tensor::new(b.shape(), db).expect("mul")),
                ]
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Unary {
    Scale(Real),
    Offset,
    Elu,
    Sigmoid,
    Exp,
    Relu,
}

impl Function for Unary {
    fn name(&self) -> &'static str {
        match self {
            Unary::Scale(_) => "scale",
            Unary::Offset => "add_scalar",
            Unary::Elu => "elu",
            Unary::Sigmoid => "sigmoid",
            Unary::Exp => "exp",
            Unary::Relu => "relu",
        }
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let gd = g.data();
        let dx: Vec<Real> = match *self {
            Unary::Scale(c) => gd.iter().map(|g| g * c).collect(),
            Unary::Offset => gd.to_vec(),
            // d/dx elu = 1 for x > 0, exp(x) = elu(x) + 1 otherwise
            Unary::Elu => gd
                .iter()
                .zip(x.data())
                .zip(out.data())
                .map(|((g, &x), &y)| if x > 0.0 { *g } else { g * (y + 1.0) })
                .collect(),
            Unary::Sigmoid => gd.iter().zip(out.data()).map(|(g, &y)| g * y * (1.0 - y)).collect(),
            Unary::Exp => gd.iter().zip(out.data()).map(|(g, &y)| g * y).collect(),
            Unary::Relu => gd
                .iter()
                .zip(x.data())
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect(),
        };
        vec![Some(Tensor::new(x.shape(), dx).expect("unary"))]
    }
}

struct MaxPool {
    argmax: Vec<u32>,
}

impl Function for MaxPool {
    fn name(&self) -> &'static str {
        "maxpool2x2"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let mut dx = Tensor::zeros(inputs[0].shape());
        let d = dx.data_mut();
        for (&src, &gv) in self.argmax.iter().zip(g.data()) {
            d[src as usize] += gv;
        }
        vec![Some(dx)]
    }
}

/// Output index → input index map of a pure rearrangement.
struct Permute {
    name: &'static str,
    src: Vec<u32>,
}

impl Function for Permute {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let mut dx = Tensor::zeros(inputs[0].shape());
        let d = dx.data_mut();
        for (&s, &gv) in self.src.iter().zip(g.data()) {
            d[s as usize] += gv;
        }
        vec![Some(dx)]
    }
}

struct Reshape;

impl Function for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(g.clone().reshaped(inputs[0].shape()).expect("reshape"))]
    }
}

struct ConcatChannels {
    widths: Vec<usize>,
}

impl Function for ConcatChannels {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let mut start = 0;
        self.widths
            .iter()
            .zip(inputs)
            .map(|(&w, x)| {
                let part = g.channels(start, w).expect("concat backward");
                start += w;
                debug_assert_eq!(part.shape(), x.shape());
                Some(part)
            })
            .collect()
    }
}

/// Views a tensor as `outer × len × inner` around one axis.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct L2Normalize {
    axis: usize,
}

impl Function for L2Normalize {
    fn name(&self) -> &'static str {
        "l2_normalize"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (outer, len, inner) = axis_split(x.shape(), self.axis);
        let mut dx = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let n = libm::sqrt((0..len).map(|j| (x.data()[idx(j)] as f64) * (x.data()[idx(j)] as f64)).sum::<f64>());
                let denom = n.max(EPS_NORM as f64);
                if n > EPS_NORM as f64 {
                    let yg: f64 = (0..len).map(|j| out.data()[idx(j)] as f64 * g.data()[idx(j)] as f64).sum();
                    for j in 0..len {
                        let k = idx(j);
                        dx[k] = ((g.data()[k] as f64 - out.data()[k] as f64 * yg) / denom) as Real;
                    }
                } else {
                    for j in 0..len {
                        let k = idx(j);
                        dx[k] = (g.data()[k] as f64 / denom) as Real;
                    }
                }
            }
        }
        vec![Some(Tensor::new(x.shape(), dx).expect("l2"))]
    }
}

struct ReduceAxis {
    kind: Reduce,
    axis: usize,
    argmax: Vec<u32>,
}

impl Function for ReduceAxis {
    fn name(&self) -> &'static str {
        match self.kind {
            Reduce::Sum => "reduce_sum",
            Reduce::Mean => "reduce_mean",
            Reduce::Max => "reduce_max",
        }
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (outer, len, inner) = axis_split(x.shape(), self.axis);
        let mut dx = vec![0.0; x.len()];
        match self.kind {
            Reduce::Sum | Reduce::Mean => {
                let f = if self.kind == Reduce::Mean { 1.0 / len as Real } else { 1.0 };
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            dx[(o * len + j) * inner + i] = g.data()[o * inner + i] * f;
                        }
                    }
                }
            }
            Reduce::Max => {
                for (&src, &gv) in self.argmax.iter().zip(g.data()) {
                    dx[src as usize] += gv;
                }
            }
        }
        vec![Some(Tensor::new(x.shape(), dx).expect("reduce"))]
    }
}

struct Dot;

impl Function for Dot {
    fn name(&self) -> &'static str {
        "dot"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let s = g.item();
        vec![Some(inputs[1].map(|v| v * s)), Some(inputs[0].map(|v| v * s))]
    }
}

struct Transpose2d;

impl Function for Transpose2d {
    fn name(&self) -> &'static str {
        "transpose2d"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let (r, c) = (inputs[0].shape()[0], inputs[0].shape()[1]);
        vec![Some(Tensor::new(&[r, c], transpose(g.data(), c, r)).expect("transpose"))]
    }
}

fn transpose(data: &[Real], rows: usize, cols: usize) -> Vec<Real> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

#[inline]
pub fn elu(x: Real) -> Real {
    if x > 0.0 {
        x
    } else {
        math::exp(x) - 1.0
    }
}

impl Tape {
    /// Cross-correlation of an H×W×Cin map with a k×k×Cin×Cout kernel.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        let (h, w, cin) = match *xs.as_slice() {
            [h, w, c] => (h, w, c),
            _ => return Err(Error::invalid("conv2d", &xs, "input must be H×W×C")),
        };
        let (k, kcin, cout) = match *ks.as_slice() {
            [k0, k1, ci, co] if k0 == k1 => (k0, ci, co),
            _ => return Err(Error::invalid("conv2d", &ks, "kernel must be k×k×Cin×Cout")),
        };
        if kcin != cin {
            return Err(Error::shape("conv2d", &xs, &ks));
        }
        if k % 2 == 0 {
            return Err(Error::invalid("conv2d", &ks, "kernel extent must be odd"));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d: stride must be ≥ 1".into()));
        }
        let pad = match padding {
            Padding::Same => (k - 1) / 2,
            Padding::Valid => 0,
        };
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape("conv2d", &xs, &ks));
        }
        let geo = ConvGeom {
            h,
            w,
            cin,
            cout,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        };
        let p = geo.ho * geo.wo;
        let q = geo.patch_len();
        let mut out = vec![0.0; p * cout];
        {
            let xv = self.value(x).data();
            let owned;
            let cols: &[Real] = if geo.is_pointwise() {
                xv
            } else {
                owned = geo.im2col(xv);
                &owned
            };
            gemm(p, q, cout, cols, q, 1, self.value(kernel).data(), cout, 1, &mut out);
        }
        let value = Tensor::new(&[geo.ho, geo.wo, cout], out)?;
        Ok(self.record(Conv2d(geo), &[x, kernel], value))
    }

    /// Adds a per-channel bias along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x);
        let bs = self.shape(bias);
        if bs.len() != 1 || xs.last() != Some(&bs[0]) {
            return Err(Error::shape("add_bias", xs, bs));
        }
        let b = self.value(bias).data();
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_exact_mut(b.len()) {
            for (a, b) in row.iter_mut().zip(b) {
                *a += *b;
            }
        }
        Ok(self.record(AddBias, &[x, bias], v))
    }

    fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op.name(), ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| match op {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
            })
            .collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.record(op, &[a, b], value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    fn unary(&mut self, op: Unary, x: Var, f: impl Fn(Real) -> Real) -> Var {
        let value = self.value(x).map(f);
        self.record(op, &[x], value)
    }

    pub fn scale(&mut self, x: Var, c: Real) -> Var {
        self.unary(Unary::Scale(c), x, |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: Real) -> Var {
        self.unary(Unary::Offset, x, |v| v + c)
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(Unary::Elu, x, elu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x, math::sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x, math::exp)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x, |v| if v > 0.0 { v } else { 0.0 })
    }

    /// 2×2 max pooling with stride 2. Ties go to the first cell in
    /// row-major order.
    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (h, w, c) = t.hwc()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid("maxpool2x2", t.shape(), "extents must be even"));
        }
        let (ho, wo) = (h / 2, w / 2);
        let d = t.data();
        let mut out = vec![0.0; ho * wo * c];
        let mut argmax = vec![0u32; ho * wo * c];
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best = (2 * oy * w + 2 * ox) * c + ch;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if d[idx] > d[best] {
                            best = idx;
                        }
                    }
                    let o = (oy * wo + ox) * c + ch;
                    out[o] = d[best];
                    argmax[o] = best as u32;
                }
            }
        }
        let value = Tensor::new(&[ho, wo, c], out)?;
        Ok(self.record(MaxPool { argmax }, &[x], value))
    }

    /// Pixel shuffle by 2: H×W×4C → 2H×2W×C. Input channel `4c + 2i + j`
    /// lands at output offset (i, j) of channel c.
    pub fn subpixel_upscale(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (h, w, c4) = t.hwc()?;
        if c4 % 4 != 0 {
            return Err(Error::invalid("subpixel_upscale", t.shape(), "channels must divide by 4"));
        }
        let c = c4 / 4;
        let (ho, wo) = (2 * h, 2 * w);
        let mut src = vec![0u32; ho * wo * c];
        for y in 0..ho {
            for xx in 0..wo {
                for ch in 0..c {
                    let sc = ch * 4 + (y % 2) * 2 + xx % 2;
                    src[(y * wo + xx) * c + ch] = (((y / 2) * w + xx / 2) * c4 + sc) as u32;
                }
            }
        }
        let d = t.data();
        let out = src.iter().map(|&s| d[s as usize]).collect();
        let value = Tensor::new(&[ho, wo, c], out)?;
        Ok(self.record(
            Permute {
                name: "subpixel_upscale",
                src,
            },
            &[x],
            value,
        ))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (h, w, c) = t.hwc()?;
        if len == 0 || start + len > c {
            return Err(Error::OutOfRange {
                op: "slice_channels",
                index: start + len,
                bound: c,
            });
        }
        let mut src = Vec::with_capacity(h * w * len);
        for px in 0..h * w {
            src.extend((start..start + len).map(|ch| (px * c + ch) as u32));
        }
        let value = t.channels(start, len)?;
        Ok(self.record(
            Permute {
                name: "slice_channels",
                src,
            },
            &[x],
            value,
        ))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidArgument("concat_channels: no inputs".into()));
        };
        let (h, w, _) = self.value(first).hwc()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (ph, pw, pc) = self.value(p).hwc()?;
            if (ph, pw) != (h, w) {
                return Err(Error::shape("concat_channels", self.shape(first), self.shape(p)));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(h * w * total);
        for px in 0..h * w {
            for (&p, &pc) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[px * pc..(px + 1) * pc]);
            }
        }
        let value = Tensor::new(&[h, w, total], out)?;
        Ok(self.record(ConcatChannels { widths }, parts, value))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.record(Reshape, &[x], value))
    }

    /// Swaps the two axes of a rank-2 tensor.
    pub fn transpose2d(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = match *t.shape() {
            [r, c] => (r, c),
            _ => return Err(Error::invalid("transpose2d", t.shape(), "expected rank 2")),
        };
        let value = Tensor::new(&[c, r], transpose(t.data(), r, c))?;
        Ok(self.record(Transpose2d, &[x], value))
    }

    /// Divides every fiber along `axis` by `max(‖fiber‖₂, EPS_NORM)`.
    pub fn l2_normalize(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::OutOfRange {
                op: "l2_normalize",
                index: axis,
                bound: t.rank(),
            });
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let d = t.data();
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let n = libm::sqrt((0..len).map(|j| (d[idx(j)] as f64) * (d[idx(j)] as f64)).sum::<f64>());
                let denom = n.max(EPS_NORM as f64);
                for j in 0..len {
                    out[idx(j)] = (d[idx(j)] as f64 / denom) as Real;
                }
            }
        }
        let value = Tensor::new(t.shape(), out)?;
        Ok(self.record(L2Normalize { axis }, &[x], value))
    }

    /// Reduces along `axis`; the axis is removed from the shape (a rank-1
    /// input reduces to shape `[1]`).
    pub fn reduce(&mut self, x: Var, kind: Reduce, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::OutOfRange {
                op: "reduce",
                index: axis,
                bound: t.rank(),
            });
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let d = t.data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        if kind == Reduce::Max {
            argmax = vec![0u32; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                out[o * inner + i] = match kind {
                    Reduce::Sum | Reduce::Mean => {
                        let s: f64 = (0..len).map(|j| d[idx(j)] as f64).sum();
                        if kind == Reduce::Mean {
                            (s / len as f64) as Real
                        } else {
                            s as Real
                        }
                    }
                    Reduce::Max => {
                        let best = (1..len).fold(idx(0), |b, j| if d[idx(j)] > d[b] { idx(j) } else { b });
                        argmax[o * inner + i] = best as u32;
                        d[best]
                    }
                };
            }
        }
        let mut shape: Vec<usize> = t.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.record(ReduceAxis { kind, axis, argmax }, &[x], value))
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let flat = self.reshape(x, &[n])?;
        self.reduce(flat, Reduce::Sum, 0)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let flat = self.reshape(x, &[n])?;
        self.reduce(flat, Reduce::Mean, 0)
    }

    /// Inner product of two equal-shape tensors as a `[1]` tensor.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("dot", ta.shape(), tb.shape()));
        }
        let value = Tensor::scalar(math::dot(ta.data(), tb.data()) as Real);
        Ok(self.record(Dot, &[a, b], value))
    }

    /// `Σ wᵢ·xᵢ` over scalar vars.
    pub fn weighted_sum(&mut self, terms: &[(Var, Real)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(v, w) in terms {
            let s = self.scale(v, w);
            acc = Some(match acc {
                Some(a) => self.add(a, s)?,
                None => s,
            });
        }
        acc.ok_or_else(|| Error::InvalidArgument("weighted_sum: no terms".into()))
    }
}
