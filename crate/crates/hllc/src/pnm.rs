//! Minimal raw PPM (P6) and PGM (P5) reader and writer, 8-bit only.
//!
//! Headers accept arbitrary whitespace and `#` comments; the writer emits
//! the canonical `P6\n<w> <h>\n255\n` form, so files written here round
//! trip byte-for-byte.

use crate::error::{Error, Result};
use crate::{Image, ImageShape};

fn pnm_err(msg: &str) -> Error {
    Error::Pnm(msg.into())
}

/// Reads one header token, skipping whitespace and `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
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
        return Err(pnm_err("unexpected end of header"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| pnm_err("non-ascii header token"))?
        .parse()
        .map_err(|_| pnm_err("bad numeric header token"))
}

/// Decodes a binary PGM (P5, one channel) or PPM (P6, three channels).
pub fn read_pnm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 {
        return Err(pnm_err("too short"));
    }
    let channels = match &bytes[0..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(pnm_err("not a raw PGM/PPM (P5/P6) file")),
    };
    let mut pos = 2;
    let width = next_token(bytes, &mut pos)?;
    let height = next_token(bytes, &mut pos)?;
    let maxval = next_token(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(pnm_err("only maxval 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(pnm_err("missing raster separator"));
    }
    pos += 1;
    let shape = ImageShape::new(height, width, channels)?;
    let need = shape.dims();
    if bytes.len() - pos != need {
        return Err(pnm_err(&format!(
            "raster has {} bytes, expected {need}",
            bytes.len() - pos
        )));
    }
    Ok(Image::new(shape, bytes[pos..].to_vec()))
}

/// Encodes an image as canonical P5 (one channel) or P6 (three channels).
pub fn write_pnm(image: &Image) -> Result<Vec<u8>> {
    let magic = match image.shape.channels {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(pnm_err(&format!(
                "cannot write {c}-channel image as PGM/PPM"
            )))
        }
    };
    let header = format!("{magic}\n{} {}\n255\n", image.shape.width, image.shape.height);
    let mut out = Vec::with_capacity(header.len() + image.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&image.pixels);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_roundtrip() {
        let shape = ImageShape::new(3, 2, 3).unwrap();
        let image = Image::new(shape, (0..18).collect());
        let bytes = write_pnm(&image).unwrap();
        assert!(bytes.starts_with(b"P6\n2 3\n255\n"));
        let back = read_pnm(&bytes).unwrap();
        assert_eq!(back, image);
        // write-read-write is byte identical
        assert_eq!(write_pnm(&back).unwrap(), bytes);
    }

    #[test]
    fn grayscale_roundtrip() {
        let shape = ImageShape::new(2, 5, 1).unwrap();
        let image = Image::new(shape, (10..20).collect());
        let bytes = write_pnm(&image).unwrap();
        assert!(bytes.starts_with(b"P5\n"));
        assert_eq!(read_pnm(&bytes).unwrap(), image);
    }

    #[test]
    fn header_comments_and_whitespace() {
        let mut bytes = b"P5 # comment\n# another\n 4\t2 \n255\n".to_vec();
        bytes.extend_from_slice(&[9; 8]);
        let image = read_pnm(&bytes).unwrap();
        assert_eq!(image.shape.width, 4);
        assert_eq!(image.shape.height, 2);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(read_pnm(b"P4\n1 1\n255\nX").is_err());
        assert!(read_pnm(b"P5\n2 2\n65535\n....").is_err());
        let short = b"P5\n4 4\n255\nabc";
        assert!(read_pnm(short).is_err());
    }
}
