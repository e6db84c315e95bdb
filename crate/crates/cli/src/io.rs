//! File formats: binary and ASCII PGM, Middlebury `.flo`, ASCII PLY and
//! CSV. Decoders work on byte slices and report failures with the byte
//! offset where they were detected; all writes go through
//! [`write_atomic`].

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use svigl::flow::FlowField;
use svigl::lop::{Point, PointCloud};
use svigl::trace::format_sig;
use svigl::Image;

use crate::error::{CliError, CliResult, FormatError};

type Decoded<T> = std::result::Result<T, FormatError>;

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let io_err = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn with_path<T>(path: &Path, r: Decoded<T>) -> CliResult<T> {
    r.map_err(|source| CliError::Format {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------- PGM

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmEncoding {
    /// `P5`
    Binary,
    /// `P2`
    Ascii,
}

/// Cursor over the whitespace- and comment-separated PNM header.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Decoded<(usize, u64)> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if start >= self.bytes.len() {
                FormatError::new(start, format!("truncated header: missing {what}"))
            } else {
                FormatError::new(start, format!("expected {what}"))
            });
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        let value = text
            .parse::<u64>()
            .map_err(|_| FormatError::new(start, format!("{what} out of range")))?;
        Ok((start, value))
    }
}

/// Decodes `P5` or `P2` data with maxval 255 or 65535 into `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Decoded<Image> {
    let encoding = match bytes.get(..2) {
        Some(b"P5") => PgmEncoding::Binary,
        Some(b"P2") => PgmEncoding::Ascii,
        _ => return Err(FormatError::new(0, "unsupported magic; expected P5 or P2")),
    };
    let mut hdr = HeaderReader { bytes, pos: 2 };
    let (w_at, width) = hdr.number("width")?;
    let (h_at, height) = hdr.number("height")?;
    let (m_at, maxval) = hdr.number("maxval")?;
    if width == 0 {
        return Err(FormatError::new(w_at, "zero width"));
    }
    if height == 0 {
        return Err(FormatError::new(h_at, "zero height"));
    }
    if maxval != 255 && maxval != 65535 {
        return Err(FormatError::new(m_at, format!("unsupported maxval {maxval}")));
    }
    let n = usize::try_from(width.saturating_mul(height))
        .ok()
        .filter(|&n| n <= 1 << 32)
        .ok_or_else(|| FormatError::new(w_at, "image dimensions too large"))?;
    let scale = 1.0 / maxval as f64;
    let mut pixels = Vec::with_capacity(n);
    match encoding {
        PgmEncoding::Binary => {
            if hdr.pos >= bytes.len() || !bytes[hdr.pos].is_ascii_whitespace() {
                return Err(FormatError::new(hdr.pos, "expected one whitespace byte after maxval"));
            }
            let start = hdr.pos + 1;
            let depth = if maxval > 255 { 2 } else { 1 };
            let need = n * depth;
            let data = &bytes[start..];
            if data.len() < need {
                return Err(FormatError::new(
                    bytes.len(),
                    format!("truncated payload: {} of {need} bytes", data.len()),
                ));
            }
            if data.len() > need {
                return Err(FormatError::new(start + need, "trailing bytes after payload"));
            }
            if depth == 1 {
                pixels.extend(data.iter().map(|&b| b as f64 * scale));
            } else {
                pixels.extend(data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale));
            }
        }
        PgmEncoding::Ascii => {
            for _ in 0..n {
                let (at, v) = hdr.number("sample")?;
                if v > maxval {
                    return Err(FormatError::new(at, format!("sample {v} exceeds maxval {maxval}")));
                }
                pixels.push(v as f64 * scale);
            }
            hdr.skip_space();
            if hdr.pos < bytes.len() {
                return Err(FormatError::new(hdr.pos, "trailing bytes after payload"));
            }
        }
    }
    Ok(Image::new(width as usize, height as usize, pixels).expect("length checked"))
}

/// Encodes an image after clamping to `[0, 1]` and rounding to `maxval`
/// levels. Only maxval 255 and 65535 are accepted.
pub fn encode_pgm(image: &Image, maxval: u16, encoding: PgmEncoding) -> Vec<u8> {
    assert!(maxval == 255 || maxval == 65535, "maxval must be 255 or 65535");
    let levels = maxval as f64;
    let quantize = |v: f64| {
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        (v * levels).round() as u16
    };
    let header = format!(
        "{}\n{} {}\n{}\n",
        if encoding == PgmEncoding::Binary { "P5" } else { "P2" },
        image.width(),
        image.height(),
        maxval
    );
    let mut out = header.into_bytes();
    match encoding {
        PgmEncoding::Binary => {
            for &v in image.pixels() {
                let q = quantize(v);
                if maxval == 255 {
                    out.push(q as u8);
                } else {
                    out.extend_from_slice(&q.to_be_bytes());
                }
            }
        }
        PgmEncoding::Ascii => {
            let mut text = String::new();
            for row in image.pixels().chunks(image.width()) {
                let line: Vec<String> = row.iter().map(|&v| quantize(v).to_string()).collect();
                text.push_str(&line.join(" "));
                text.push('\n');
            }
            out.extend_from_slice(text.as_bytes());
        }
    }
    out
}

pub fn load_pgm(path: &Path) -> CliResult<Image> {
    let bytes = read_file(path)?;
    with_path(path, decode_pgm(&bytes))
}

pub fn save_pgm(path: &Path, image: &Image, maxval: u16) -> CliResult<()> {
    write_atomic(path, &encode_pgm(image, maxval, PgmEncoding::Binary))
}

// ---------------------------------------------------------------- FLO

pub const FLO_MAGIC: &[u8; 4] = b"PIEH";

/// Decodes a Middlebury flow file: magic `PIEH`, little-endian `i32` width
/// and height, then row-major interleaved little-endian `f32` `(u, v)`.
pub fn decode_flo(bytes: &[u8]) -> Decoded<FlowField> {
    if bytes.len() < 4 || &bytes[..4] != FLO_MAGIC {
        return Err(FormatError::new(0, "bad magic; expected PIEH"));
    }
    let read_i32 = |at: usize, what: &str| -> Decoded<i32> {
        bytes
            .get(at..at + 4)
            .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| FormatError::new(bytes.len(), format!("truncated header: missing {what}")))
    };
    let width = read_i32(4, "width")?;
    let height = read_i32(8, "height")?;
    if width <= 0 {
        return Err(FormatError::new(4, format!("invalid width {width}")));
    }
    if height <= 0 {
        return Err(FormatError::new(8, format!("invalid height {height}")));
    }
    let (w, h) = (width as usize, height as usize);
    let n = w * h;
    let need = 12 + 8 * n;
    if bytes.len() < need {
        return Err(FormatError::new(
            bytes.len(),
            format!("truncated payload: expected {need} bytes"),
        ));
    }
    if bytes.len() > need {
        return Err(FormatError::new(need, "trailing bytes after payload"));
    }
    let mut state = vec![0.0; 2 * n];
    for (l, c) in bytes[12..].chunks_exact(8).enumerate() {
        state[l] = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
        state[n + l] = f32::from_le_bytes([c[4], c[5], c[6], c[7]]) as f64;
    }
    Ok(FlowField::new(w, h, state).expect("length checked"))
}

/// Encodes a flow field; components are rounded to `f32`.
pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let (u, v) = (flow.u(), flow.v());
    let mut out = Vec::with_capacity(12 + 8 * u.len());
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (a, b) in u.iter().zip(v) {
        out.extend_from_slice(&(*a as f32).to_le_bytes());
        out.extend_from_slice(&(*b as f32).to_le_bytes());
    }
    out
}

pub fn load_flo(path: &Path) -> CliResult<FlowField> {
    let bytes = read_file(path)?;
    with_path(path, decode_flo(&bytes))
}

pub fn save_flo(path: &Path, flow: &FlowField) -> CliResult<()> {
    write_atomic(path, &encode_flo(flow))
}

// ---------------------------------------------------------------- PLY

struct PlyElement {
    name: String,
    count: usize,
    /// Property names; list properties are recorded as `None`.
    properties: Vec<Option<String>>,
}

/// Lines of `text` paired with their starting byte offsets.
fn lines_with_offsets(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    text.split_inclusive('\n').map(move |raw| {
        let at = offset;
        offset += raw.len();
        (at, raw.trim_end_matches(['\n', '\r']))
    })
}

/// Decodes an ASCII PLY file and returns the `x`, `y`, `z` properties of its
/// `vertex` element. Other elements and properties are skipped.
pub fn decode_ply(bytes: &[u8]) -> Decoded<PointCloud> {
    if !bytes.starts_with(b"ply") {
        return Err(FormatError::new(0, "bad magic; expected ply"));
    }
    let text = std::str::from_utf8(bytes).map_err(|e| FormatError::new(e.valid_up_to(), "invalid UTF-8"))?;
    let mut lines = lines_with_offsets(text);
    lines.next();

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_done = false;
    for (at, line) in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", "1.0"] => {}
            ["format", variant, ..] => {
                return Err(FormatError::new(at, format!("unsupported format {variant}")));
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| FormatError::new(at, format!("bad element count {count}")))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", _, _, _] => match elements.last_mut() {
                Some(e) => e.properties.push(None),
                None => return Err(FormatError::new(at, "property before element")),
            },
            ["property", _, name] => match elements.last_mut() {
                Some(e) => e.properties.push(Some(name.to_string())),
                None => return Err(FormatError::new(at, "property before element")),
            },
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(FormatError::new(at, format!("malformed header line {line:?}"))),
        }
    }
    if !header_done {
        return Err(FormatError::new(bytes.len(), "truncated header: missing end_header"));
    }
    let vertex_at = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| FormatError::new(0, "no vertex element"))?;
    let vertex = &elements[vertex_at];
    let column = |axis: &str| {
        vertex
            .properties
            .iter()
            .position(|p| p.as_deref() == Some(axis))
            .ok_or_else(|| FormatError::new(0, format!("vertex element lacks property {axis}")))
    };
    let cols = [column("x")?, column("y")?, column("z")?];
    if vertex.properties.iter().any(Option::is_none) {
        return Err(FormatError::new(0, "list properties on vertices are not supported"));
    }

    let skip: usize = elements[..vertex_at].iter().map(|e| e.count).sum();
    let mut body = lines.filter(|(_, l)| !l.trim().is_empty());
    for _ in 0..skip {
        if body.next().is_none() {
            return Err(FormatError::new(bytes.len(), "truncated payload"));
        }
    }
    let mut points: Vec<Point> = Vec::with_capacity(vertex.count);
    for _ in 0..vertex.count {
        let (at, line) = body
            .next()
            .ok_or_else(|| FormatError::new(bytes.len(), "truncated payload"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != vertex.properties.len() {
            return Err(FormatError::new(
                at,
                format!("expected {} values, found {}", vertex.properties.len(), fields.len()),
            ));
        }
        let mut p = [0.0; 3];
        for (k, &c) in cols.iter().enumerate() {
            p[k] = fields[c]
                .parse()
                .map_err(|_| FormatError::new(at, format!("bad number {:?}", fields[c])))?;
        }
        points.push(p);
    }
    PointCloud::new(points).map_err(|e| FormatError::new(0, e.to_string()))
}

/// ASCII PLY with one vertex element. Coordinates are printed in the
/// shortest form that parses back to the same `f64`.
pub fn encode_ply(cloud: &PointCloud) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    );
    for p in cloud.points() {
        let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
    }
    out.into_bytes()
}

pub fn load_ply(path: &Path) -> CliResult<PointCloud> {
    let bytes = read_file(path)?;
    with_path(path, decode_ply(&bytes))
}

pub fn save_ply(path: &Path, cloud: &PointCloud) -> CliResult<()> {
    write_atomic(path, &encode_ply(cloud))
}

// ---------------------------------------------------------------- CSV

/// Numeric CSV cell: 9 significant digits, empty for `None`.
pub fn cell(v: Option<f64>) -> String {
    v.map(format_sig).unwrap_or_default()
}

/// CSV text from a header and rows, LF line endings.
pub fn csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

pub fn save_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    write_atomic(path, csv(header, rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_comments_and_errors() {
        let img = decode_pgm(b"P2 # c\n2 1\n# x\n255\n0 255\n").unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
        assert_eq!(decode_pgm(b"P6\n1 1\n255\n\0").unwrap_err().offset, 0);
        assert_eq!(decode_pgm(b"P5\n1 1\n100\n\0").unwrap_err().offset, 7);
        let e = decode_pgm(b"P5\n2 2\n255\n\0\0").unwrap_err();
        assert_eq!(e.offset, 13);
        assert!(e.message.contains("truncated"));
        assert_eq!(decode_pgm(b"P2\n1 1\n255\n256\n").unwrap_err().offset, 11);
        assert_eq!(decode_pgm(b"P5\n0 1\n255\n").unwrap_err().offset, 3);
    }

    #[test]
    fn pgm_sixteen_bit_is_big_endian() {
        let img = decode_pgm(b"P5\n1 1\n65535\n\x01\x00").unwrap();
        assert_eq!(img.pixels(), &[256.0 / 65535.0]);
    }

    #[test]
    fn flo_header_errors() {
        let flow = FlowField::constant(2, 1, 0.5, -0.25);
        let bytes = encode_flo(&flow);
        assert_eq!(bytes.len(), 12 + 16);
        assert_eq!(decode_flo(&bytes[..20]).unwrap_err().offset, 20);
        let mut neg = bytes.clone();
        neg[8..12].copy_from_slice(&(-1i32).to_le_bytes());
        assert_eq!(decode_flo(&neg).unwrap_err().offset, 8);
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(decode_flo(&long).unwrap_err().offset, 28);
    }

    #[test]
    fn ply_skips_other_elements_and_properties() {
        let text = "ply\nformat ascii 1.0\ncomment hi\nelement camera 1\nproperty float f\n\
                    element vertex 2\nproperty float z\nproperty float x\nproperty uchar red\nproperty float y\n\
                    element face 1\nproperty list uchar int vertex_indices\nend_header\n\
                    7\n3 1 9 2\n6 4 0 5\n3 0 1 1\n";
        let cloud = decode_ply(text.as_bytes()).unwrap();
        assert_eq!(cloud.points(), &[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
    }

    #[test]
    fn ply_errors_carry_line_offsets() {
        let bin = "ply\nformat binary_little_endian 1.0\n";
        assert_eq!(decode_ply(bin.as_bytes()).unwrap_err().offset, 4);
        let bad = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 q\n";
        let e = decode_ply(bad.as_bytes()).unwrap_err();
        assert_eq!(e.offset, bad.find("1 2 q").unwrap());
        assert_eq!(decode_ply(b"obj\n").unwrap_err().offset, 0);
        let short = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert_eq!(decode_ply(short.as_bytes()).unwrap_err().offset, short.len());
    }

    #[test]
    fn csv_layout() {
        let text = csv(&["a", "b"], &[vec!["1".into(), cell(Some(0.1 + 0.2))], vec!["2".into(), cell(None)]]);
        assert_eq!(text, "a,b\n1,0.3\n2,\n");
    }
}
