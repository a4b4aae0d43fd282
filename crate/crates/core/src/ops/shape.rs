//! Structural ops: elementwise add, channel concatenation, per-channel bias,
//! and nearest-neighbor upsampling.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "add shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    let out = Tensor::from_vec(a.shape(), data)?;
    out.check_finite("add")?;
    Ok(out)
}

/// Concatenate `[h, w, c_i]` maps along the channel axis.
pub fn concat_channels<S: Scalar>(parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
    if parts.is_empty() {
        return Err(Error::arg("concat needs at least one tensor"));
    }
    let (h, w) = (parts[0].dim(0), parts[0].dim(1));
    let mut c_total = 0;
    for p in parts {
        if p.rank() != 3 || p.dim(0) != h || p.dim(1) != w {
            return Err(Error::shape(format!(
                "concat spatial mismatch: {:?} vs [{h}, {w}, _]",
                p.shape()
            )));
        }
        c_total += p.dim(2);
    }
    let mut out = vec![S::zero(); h * w * c_total];
    for y in 0..h {
        for x in 0..w {
            let mut off = 0;
            for p in parts {
                let c = p.dim(2);
                let src = &p.data()[(y * w + x) * c..(y * w + x) * c + c];
                out[(y * w + x) * c_total + off..(y * w + x) * c_total + off + c]
                    .copy_from_slice(src);
                off += c;
            }
        }
    }
    Tensor::from_vec(&[h, w, c_total], out)
}

/// Split the concat gradient back into per-part gradients.
pub fn concat_channels_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    part_channels: &[usize],
) -> Result<Vec<Tensor<S>>> {
    let (h, w, c_total) = (grad_out.dim(0), grad_out.dim(1), grad_out.dim(2));
    if part_channels.iter().sum::<usize>() != c_total {
        return Err(Error::shape("concat backward channel mismatch"));
    }
    let go = grad_out.data();
    let mut grads: Vec<Tensor<S>> = part_channels
        .iter()
        .map(|&c| Tensor::zeros(&[h, w, c]))
        .collect();
    for y in 0..h {
        for x in 0..w {
            let mut off = 0;
            for (gi, &c) in part_channels.iter().enumerate() {
                let dst = grads[gi].data_mut();
                dst[(y * w + x) * c..(y * w + x) * c + c]
                    .copy_from_slice(&go[(y * w + x) * c_total + off..(y * w + x) * c_total + off + c]);
                off += c;
            }
        }
    }
    Ok(grads)
}

/// Add a per-channel bias to a `[.., c]` tensor.
pub fn bias_add<S: Scalar>(input: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let c = *input
        .shape()
        .last()
        .ok_or_else(|| Error::shape("bias_add needs rank >= 1"))?;
    if bias.shape() != [c] {
        return Err(Error::shape(format!(
            "bias shape {:?} does not match {c} channels",
            bias.shape()
        )));
    }
    let b = bias.data();
    let data = input
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + b[i % c])
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Returns (d_input, d_bias); d_input is just the upstream gradient.
pub fn bias_add_backward<S: Scalar>(grad_out: &Tensor<S>, channels: usize) -> (Tensor<S>, Tensor<S>) {
    let mut d_b = vec![S::zero(); channels];
    for (i, &g) in grad_out.data().iter().enumerate() {
        d_b[i % channels] += g;
    }
    (
        grad_out.clone(),
        Tensor::from_vec(&[channels], d_b).unwrap(),
    )
}

/// Nearest-neighbor upsample of a `[h, w, c]` map by an integer factor.
pub fn nearest_upsample<S: Scalar>(input: &Tensor<S>, factor: usize) -> Result<Tensor<S>> {
    if input.rank() != 3 {
        return Err(Error::shape("nearest_upsample expects [h, w, c]"));
    }
    if factor == 0 {
        return Err(Error::arg("factor must be positive"));
    }
    let (h, w, c) = (input.dim(0), input.dim(1), input.dim(2));
    let (oh, ow) = (h * factor, w * factor);
    let x = input.data();
    let mut out = vec![S::zero(); oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let src = ((oy / factor) * w + ox / factor) * c;
            out[(oy * ow + ox) * c..(oy * ow + ox) * c + c].copy_from_slice(&x[src..src + c]);
        }
    }
    Tensor::from_vec(&[oh, ow, c], out)
}

/// Sums the gradient over each factor x factor output patch.
pub fn nearest_upsample_backward<S: Scalar>(grad_out: &Tensor<S>, factor: usize) -> Result<Tensor<S>> {
    let (oh, ow, c) = (grad_out.dim(0), grad_out.dim(1), grad_out.dim(2));
    let (h, w) = (oh / factor, ow / factor);
    let go = grad_out.data();
    let mut d_in = vec![S::zero(); h * w * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = ((oy / factor) * w + ox / factor) * c;
            for ch in 0..c {
                d_in[dst + ch] += go[(oy * ow + ox) * c + ch];
            }
        }
    }
    Tensor::from_vec(&[h, w, c], d_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_round_trips() {
        let a = Tensor::from_vec(&[1, 2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[1, 2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), &[1, 2, 3]);
        assert_eq!(cat.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let parts = concat_channels_backward(&cat, &[1, 2]).unwrap();
        assert_eq!(parts[0].data(), a.data());
        assert_eq!(parts[1].data(), b.data());
    }

    #[test]
    fn bias_add_broadcasts_over_rows() {
        let x = Tensor::from_vec(&[2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![10.0, 20.0]).unwrap();
        let y = bias_add(&x, &b).unwrap();
        assert_eq!(y.data(), &[10.0, 20.0, 11.0, 21.0]);
        let (dx, db) = bias_add_backward(&Tensor::filled(&[2, 2], 1.0), 2);
        assert_eq!(dx.data(), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(db.data(), &[2.0, 2.0]);
    }

    #[test]
    fn nearest_upsample_replicates_then_backward_sums() {
        let x = Tensor::from_vec(&[1, 2, 1], vec![1.0, 2.0]).unwrap();
        let y = nearest_upsample(&x, 2).unwrap();
        assert_eq!(y.shape(), &[2, 4, 1]);
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        let d = nearest_upsample_backward(&Tensor::filled(&[2, 4, 1], 1.0), 2).unwrap();
        assert_eq!(d.data(), &[4.0, 4.0]);
    }
}
