//! Binary PPM (P6) reading and writing: bit-exact, no external decoders.

use std::fs;
use std::path::Path;

use crate::error::Error;
use crate::Result;

/// Writes an 8-bit RGB image. `rgb` is row-major, 3 bytes per pixel.
pub fn write_ppm(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if rgb.len() != width * height * 3 {
        return Err(Error::Shape(format!(
            "{} bytes for {width}x{height} rgb image",
            rgb.len()
        )));
    }
    let mut buf = format!("P6\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(rgb);
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a P6 file with maxval 255. Header comments (`#`) are accepted.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let origin = path.display().to_string();
    if !bytes.starts_with(b"P6") {
        return Err(Error::format(&origin, "not a P6 ppm file"));
    }
    // header: three whitespace-separated numbers after the magic, with
    // optional # comments; a single whitespace byte then separates the
    // header from pixel data
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(&origin, "malformed ppm header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(&origin, "malformed ppm header number"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(&origin, format!("unsupported maxval {maxval}")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(&origin, "missing header terminator"));
    }
    pos += 1;
    let need = width * height * 3;
    if bytes.len() - pos != need {
        return Err(Error::format(
            &origin,
            format!("expected {need} pixel bytes, found {}", bytes.len() - pos),
        ));
    }
    Ok((width, height, bytes[pos..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let rgb: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 7) as u8).collect();
        write_ppm(&path, 3, 2, &rgb).unwrap();
        let (w, h, back) = read_ppm(&path).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(back, rgb);
    }

    #[test]
    fn header_comments_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let mut buf = b"P6\n# a comment\n2 1\n255\n".to_vec();
        buf.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        std::fs::write(&path, buf).unwrap();
        let (w, h, rgb) = read_ppm(&path).unwrap();
        assert_eq!((w, h), (2, 1));
        assert_eq!(rgb, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn truncated_pixels_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        std::fs::write(&path, b"P6\n2 2\n255\n123").unwrap();
        assert!(read_ppm(&path).is_err());
    }
}
