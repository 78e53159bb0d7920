//! Binary PPM (P6, maxval 255) encoding and decoding.

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push(to_byte(img.get(c, y, x)));
            }
        }
    }
    out
}

/// White where the mask is set, black elsewhere.
pub fn mask_image(mask: &Mask) -> Image {
    Image::from_fn(mask.height(), mask.width(), |_, y, x| if mask.get(y, x) { 1.0 } else { 0.0 })
}

fn header_tokens(buf: &[u8]) -> Result<([usize; 3], usize)> {
    let bad = |m: &str| Error::BadMagic(format!("PPM: {m}"));
    if !buf.starts_with(b"P6") {
        return Err(bad("expected P6"));
    }
    let mut pos = 2;
    let mut vals = [0usize; 3];
    for v in &mut vals {
        loop {
            match buf.get(pos) {
                Some(b'#') => {
                    while buf.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::TruncatedPayload("PPM header".into())),
            }
        }
        let start = pos;
        while buf.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *v = std::str::from_utf8(&buf[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed header"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !buf.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(bad("malformed header"));
    }
    Ok((vals, pos + 1))
}

pub fn decode_ppm(buf: &[u8]) -> Result<Image> {
    let ([w, h, maxval], start) = header_tokens(buf)?;
    if maxval != 255 {
        return Err(Error::DimensionMismatch(format!("PPM maxval {maxval}, only 255 is supported")));
    }
    let raster = &buf[start..];
    if raster.len() < 3 * w * h {
        return Err(Error::TruncatedPayload("PPM raster".into()));
    }
    Ok(Image::from_fn(h, w, |c, y, x| raster[3 * (y * w + x) + c] as f32 / 255.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_round_trip() {
        let img = Image::from_fn(3, 2, |c, y, x| ((c + 3 * y + 7 * x) % 256) as f32 / 255.0);
        let bytes = encode_ppm(&img);
        assert!(bytes.starts_with(b"P6\n2 3\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
        assert_eq!(decode_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn comments_and_errors() {
        let mut b = b"P6 # note\n1 1\n255\n".to_vec();
        b.extend([10, 20, 30]);
        assert_eq!(decode_ppm(&b).unwrap().get(2, 0, 0), 30.0 / 255.0);
        assert!(decode_ppm(b"P5\n1 1\n255\n\0").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\0\0").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
    }
}
