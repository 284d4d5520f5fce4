//! Binary netpbm IO (P6 colour, P5 grey/labels) and bilinear resizing.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use calc2_core::augment::LabelMap;
use calc2_core::{Real, Tensor};

/// 8-bit raster with 1 or 3 interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        bail!("truncated header");
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = next_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .with_context(|| format!("bad {what} in header"))
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Raster> {
    let mut pos = 0;
    let channels = match next_token(bytes, &mut pos)? {
        b"P6" => 3,
        b"P5" => 1,
        other => bail!("unsupported image type {:?}; only binary P6 and P5 are read", String::from_utf8_lossy(other)),
    };
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        bail!("only 8-bit images are supported (maxval {maxval})");
    }
    if width == 0 || height == 0 {
        bail!("empty image");
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height * channels;
    if bytes.len() < pos + n {
        bail!("raster truncated: expected {n} bytes, found {}", bytes.len().saturating_sub(pos));
    }
    Ok(Raster {
        width,
        height,
        channels,
        data: bytes[pos..pos + n].to_vec(),
    })
}

pub fn encode_pnm(r: &Raster) -> Vec<u8> {
    let magic = if r.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", r.width, r.height).into_bytes();
    out.extend_from_slice(&r.data);
    out
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_pnm(&bytes).with_context(|| format!("decoding {}", path.display()))
}

pub fn write_raster(path: &Path, r: &Raster) -> Result<()> {
    fs::write(path, encode_pnm(r)).with_context(|| format!("writing {}", path.display()))
}

/// `[H, W, 3]` tensor in [0,1]. Grey images are replicated.
pub fn raster_to_tensor(r: &Raster) -> Tensor {
    let mut data = Vec::with_capacity(r.width * r.height * 3);
    for px in r.data.chunks_exact(r.channels) {
        for c in 0..3 {
            data.push(px[c.min(r.channels - 1)] as Real / 255.0);
        }
    }
    Tensor::new(&[r.height, r.width, 3], data).expect("raster extents")
}

pub fn tensor_to_raster(t: &Tensor) -> Result<Raster> {
    let (height, width, channels) = t.hwc()?;
    if channels != 3 && channels != 1 {
        bail!("cannot store a {channels}-channel image");
    }
    let data = t
        .data()
        .iter()
        .map(|&v| (v as f64 * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok(Raster {
        width,
        height,
        channels,
        data,
    })
}

/// Half-pixel-centre bilinear resampling of an HWC tensor.
pub fn resize_bilinear(t: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (h, w, c) = t.hwc()?;
    if (h, w) == (height, width) {
        return Ok(t.clone());
    }
    let src = t.data();
    let sy = h as f64 / height as f64;
    let sx = w as f64 / width as f64;
    let mut out = Vec::with_capacity(height * width * c);
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ay = fy - y0 as f64;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let ax = fx - x0 as f64;
            for ch in 0..c {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch] as f64;
                let top = at(y0, x0) * (1.0 - ax) + at(y0, x1) * ax;
                let bottom = at(y1, x0) * (1.0 - ax) + at(y1, x1) * ax;
                out.push((top * (1.0 - ay) + bottom * ay) as Real);
            }
        }
    }
    Ok(Tensor::new(&[height, width, c], out)?)
}

/// Nearest-neighbour label resampling.
pub fn resize_labels(l: &LabelMap, height: usize, width: usize) -> LabelMap {
    if (l.height, l.width) == (height, width) {
        return l.clone();
    }
    let mut labels = Vec::with_capacity(height * width);
    for y in 0..height {
        let sy = ((y * l.height) / height).min(l.height - 1);
        for x in 0..width {
            let sx = ((x * l.width) / width).min(l.width - 1);
            labels.push(l.labels[sy * l.width + sx]);
        }
    }
    LabelMap::new(width, height, labels).expect("label extents")
}

/// Reads a colour or grey image and resizes it to the network input.
pub fn load_image(path: &Path, height: usize, width: usize) -> Result<Tensor> {
    let t = raster_to_tensor(&read_raster(path)?);
    resize_bilinear(&t, height, width).with_context(|| format!("resizing {}", path.display()))
}

pub fn save_image(path: &Path, t: &Tensor) -> Result<()> {
    write_raster(path, &tensor_to_raster(t)?)
}

pub fn load_labels(path: &Path) -> Result<LabelMap> {
    let r = read_raster(path)?;
    if r.channels != 1 {
        bail!("label map {} must be a P5 grey image", path.display());
    }
    Ok(LabelMap::new(r.width, r.height, r.data)?)
}

pub fn save_labels(path: &Path, l: &LabelMap) -> Result<()> {
    write_raster(
        path,
        &Raster {
            width: l.width,
            height: l.height,
            channels: 1,
            data: l.labels.clone(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_with_comments() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 128, 255]);
        let r = decode_pnm(&bytes).unwrap();
        assert_eq!((r.width, r.height, r.channels), (2, 1, 3));
        let t = raster_to_tensor(&r);
        assert_eq!(tensor_to_raster(&t).unwrap(), r);
        assert_eq!(decode_pnm(&encode_pnm(&r)).unwrap(), r);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decode_pnm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(decode_pnm(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(decode_pnm(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").is_err());
        assert!(decode_pnm(b"P6\n1").is_err());
    }

    #[test]
    fn resize_preserves_constants_and_corners() {
        let t = Tensor::full(&[5, 7, 3], 0.25);
        let r = resize_bilinear(&t, 16, 16).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
        let ramp = Tensor::new(&[1, 4, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let down = resize_bilinear(&ramp, 1, 2).unwrap();
        assert_eq!(down.data(), &[0.5, 2.5]);
    }

    #[test]
    fn label_resize_is_nearest() {
        let l = LabelMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        let up = resize_labels(&l, 4, 4);
        assert_eq!(up.labels[..4], [0, 0, 1, 1]);
        assert_eq!(up.labels[12..], [2, 2, 3, 3]);
    }
}
