//! ASCII OBJ and ASCII / binary little-endian PLY.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{TriangleMesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(MeshFormat::Obj),
            "ply" => Some(MeshFormat::Ply),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

/// Mesh plus the optional per-vertex colors and header comments found in the file.
#[derive(Debug, Clone)]
pub struct LoadedMesh {
    pub mesh: TriangleMesh,
    pub colors: Option<Vec<[u8; 3]>>,
    pub comments: Vec<String>,
}

pub fn load_mesh(path: impl AsRef<Path>, format: MeshFormat) -> Result<TriangleMesh> {
    Ok(load_mesh_full(path, format)?.mesh)
}

pub fn load_mesh_full(path: impl AsRef<Path>, format: MeshFormat) -> Result<LoadedMesh> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let (vertices, faces, colors, comments) = match format {
        MeshFormat::Obj => {
            let (v, f, c) = read_obj(&mut reader, path)?;
            (v, f, c, Vec::new())
        }
        MeshFormat::Ply => read_ply(&mut reader, path)?,
    };
    let mesh = TriangleMesh::new(vertices, faces)?;
    Ok(LoadedMesh {
        mesh,
        colors,
        comments,
    })
}

/// Writes ASCII OBJ or ASCII PLY. Coordinates use shortest round-trip formatting.
pub fn save_mesh(
    mesh: &TriangleMesh,
    path: impl AsRef<Path>,
    format: MeshFormat,
    vertex_colors: Option<&[[u8; 3]]>,
) -> Result<()> {
    save_mesh_with(mesh, path, format, PlyEncoding::Ascii, vertex_colors, &[])
}

pub fn save_mesh_with(
    mesh: &TriangleMesh,
    path: impl AsRef<Path>,
    format: MeshFormat,
    encoding: PlyEncoding,
    vertex_colors: Option<&[[u8; 3]]>,
    comments: &[String],
) -> Result<()> {
    let path = path.as_ref();
    if let Some(colors) = vertex_colors {
        if colors.len() != mesh.n_vertices() {
            return Err(Error::Validation(format!(
                "{} vertex colors for {} vertices",
                colors.len(),
                mesh.n_vertices()
            )));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        MeshFormat::Obj => write_obj(&mut w, mesh, vertex_colors, comments),
        MeshFormat::Ply => write_ply(&mut w, mesh, encoding, vertex_colors, comments),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

type ObjContents = (Vec<Vec3>, Vec<[usize; 3]>, Option<Vec<[u8; 3]>>);

fn read_obj(reader: &mut impl BufRead, path: &Path) -> Result<ObjContents> {
    let mut vertices = Vec::new();
    let mut colors: Vec<[u8; 3]> = Vec::new();
    let mut faces = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let values: Vec<f64> = tokens
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(path, lineno, format!("bad vertex: {e}")))?;
                if values.len() < 3 {
                    return Err(parse_err(path, lineno, "vertex needs 3 coordinates"));
                }
                vertices.push([values[0], values[1], values[2]]);
                if values.len() >= 6 {
                    colors.push([
                        unit_to_u8(values[3]),
                        unit_to_u8(values[4]),
                        unit_to_u8(values[5]),
                    ]);
                }
            }
            Some("f") => {
                let mut face = Vec::with_capacity(3);
                for t in tokens {
                    let head = t.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|e| parse_err(path, lineno, format!("bad face index {t:?}: {e}")))?;
                    if i <= 0 {
                        return Err(parse_err(
                            path,
                            lineno,
                            format!("face index {i}: OBJ indices are 1-based and positive"),
                        ));
                    }
                    face.push(i as usize - 1);
                }
                if face.len() != 3 {
                    return Err(Error::Validation(format!(
                        "line {lineno}: face with {} vertices, only triangles are accepted",
                        face.len()
                    )));
                }
                faces.push([face[0], face[1], face[2]]);
            }
            _ => {}
        }
    }
    let colors = (!colors.is_empty() && colors.len() == vertices.len()).then_some(colors);
    Ok((vertices, faces, colors))
}

fn unit_to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_obj(
    w: &mut impl Write,
    mesh: &TriangleMesh,
    colors: Option<&[[u8; 3]]>,
    comments: &[String],
) -> std::io::Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    for (i, v) in mesh.vertices().iter().enumerate() {
        match colors {
            Some(c) => {
                let [r, g, b] = c[i];
                writeln!(
                    w,
                    "v {} {} {} {} {} {}",
                    v[0],
                    v[1],
                    v[2],
                    r as f64 / 255.0,
                    g as f64 / 255.0,
                    b as f64 / 255.0
                )?
            }
            None => writeln!(w, "v {} {} {}", v[0], v[1], v[2])?,
        }
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn read_le(self, r: &mut (impl Read + ?Sized)) -> std::io::Result<f64> {
        fn bytes<const N: usize>(r: &mut (impl Read + ?Sized)) -> std::io::Result<[u8; N]> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf)?;
            Ok(buf)
        }
        Ok(match self {
            Scalar::I8 => i8::from_le_bytes(bytes(r)?) as f64,
            Scalar::U8 => u8::from_le_bytes(bytes(r)?) as f64,
            Scalar::I16 => i16::from_le_bytes(bytes(r)?) as f64,
            Scalar::U16 => u16::from_le_bytes(bytes(r)?) as f64,
            Scalar::I32 => i32::from_le_bytes(bytes(r)?) as f64,
            Scalar::U32 => u32::from_le_bytes(bytes(r)?) as f64,
            Scalar::F32 => f32::from_le_bytes(bytes(r)?) as f64,
            Scalar::F64 => f64::from_le_bytes(bytes(r)?),
        })
    }
}

enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

type PlyContents = (Vec<Vec3>, Vec<[usize; 3]>, Option<Vec<[u8; 3]>>, Vec<String>);

fn read_ply(reader: &mut impl BufRead, path: &Path) -> Result<PlyContents> {
    let mut lineno = 0;
    let mut next_line = |reader: &mut dyn BufRead| -> Result<(usize, String)> {
        let mut line = String::new();
        lineno += 1;
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(parse_err(path, lineno, "unexpected end of header"));
        }
        Ok((lineno, line.trim_end_matches(['\n', '\r']).to_string()))
    };
    let (_, magic) = next_line(reader)?;
    if magic.trim() != "ply" {
        return Err(parse_err(path, 1, "missing `ply` magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut comments = Vec::new();
    loop {
        let (ln, line) = next_line(reader)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => encoding = Some(PlyEncoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(PlyEncoding::BinaryLittleEndian),
            ["format", other, ..] => {
                return Err(parse_err(path, ln, format!("unsupported PLY format {other}")))
            }
            ["comment", ..] => comments.push(line.trim_start()["comment".len()..].trim().to_string()),
            ["obj_info", ..] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(path, ln, format!("bad element count {count}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count_ty, item_ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, ln, "property before element"))?;
                let c = Scalar::parse(count_ty)
                    .ok_or_else(|| parse_err(path, ln, format!("unknown type {count_ty}")))?;
                let i = Scalar::parse(item_ty)
                    .ok_or_else(|| parse_err(path, ln, format!("unknown type {item_ty}")))?;
                el.properties.push(Property::List(name.to_string(), c, i));
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, ln, "property before element"))?;
                let t = Scalar::parse(ty).ok_or_else(|| parse_err(path, ln, format!("unknown type {ty}")))?;
                el.properties.push(Property::Scalar(name.to_string(), t));
            }
            ["end_header"] => break,
            [] => {}
            _ => return Err(parse_err(path, ln, format!("unrecognized header line {line:?}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| parse_err(path, lineno, "missing format line"))?;

    let mut vertices = Vec::new();
    let mut colors: Vec<[u8; 3]> = Vec::new();
    let mut faces = Vec::new();
    let mut body = Body {
        encoding,
        tokens: Vec::new(),
        pos: 0,
        line: lineno,
        path,
    };
    if encoding == PlyEncoding::Ascii {
        let mut rest = String::new();
        reader.read_to_string(&mut rest).map_err(|e| Error::io(path, e))?;
        body.tokens = rest.split_whitespace().map(str::to_string).collect();
    }

    for el in &elements {
        for _ in 0..el.count {
            body.line += 1;
            let mut xyz = [f64::NAN; 3];
            let mut rgb = [None::<u8>; 3];
            let mut face: Option<Vec<usize>> = None;
            for prop in &el.properties {
                match prop {
                    Property::Scalar(name, ty) => {
                        let v = body.read(reader, *ty)?;
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            "red" => rgb[0] = Some(v as u8),
                            "green" => rgb[1] = Some(v as u8),
                            "blue" => rgb[2] = Some(v as u8),
                            _ => {}
                        }
                    }
                    Property::List(name, count_ty, item_ty) => {
                        let count = body.read(reader, *count_ty)?;
                        if count < 0.0 {
                            return Err(parse_err(path, body.line, "negative list length"));
                        }
                        let mut items = Vec::with_capacity(count as usize);
                        for _ in 0..count as usize {
                            let v = body.read(reader, *item_ty)?;
                            if v < 0.0 || v.fract() != 0.0 {
                                return Err(parse_err(path, body.line, format!("bad index {v}")));
                            }
                            items.push(v as usize);
                        }
                        if name == "vertex_indices" || name == "vertex_index" {
                            face = Some(items);
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => {
                    if xyz.iter().any(|c| c.is_nan()) {
                        return Err(parse_err(path, body.line, "vertex without x, y, z"));
                    }
                    vertices.push(xyz);
                    if let [Some(r), Some(g), Some(b)] = rgb {
                        colors.push([r, g, b]);
                    }
                }
                "face" => {
                    let f = face.ok_or_else(|| parse_err(path, body.line, "face without vertex_indices"))?;
                    if f.len() != 3 {
                        return Err(Error::Validation(format!(
                            "face with {} vertices, only triangles are accepted",
                            f.len()
                        )));
                    }
                    faces.push([f[0], f[1], f[2]]);
                }
                _ => {}
            }
        }
    }
    let colors = (!colors.is_empty() && colors.len() == vertices.len()).then_some(colors);
    Ok((vertices, faces, colors, comments))
}

struct Body<'a> {
    encoding: PlyEncoding,
    tokens: Vec<String>,
    pos: usize,
    line: usize,
    path: &'a Path,
}

impl Body<'_> {
    fn read(&mut self, reader: &mut dyn BufRead, ty: Scalar) -> Result<f64> {
        match self.encoding {
            PlyEncoding::Ascii => {
                let t = self
                    .tokens
                    .get(self.pos)
                    .ok_or_else(|| parse_err(self.path, self.line, "unexpected end of body"))?;
                self.pos += 1;
                t.parse::<f64>()
                    .map_err(|e| parse_err(self.path, self.line, format!("bad value {t:?}: {e}")))
            }
            PlyEncoding::BinaryLittleEndian => ty
                .read_le(reader)
                .map_err(|_| parse_err(self.path, self.line, "unexpected end of binary body")),
        }
    }
}

fn write_ply(
    w: &mut impl Write,
    mesh: &TriangleMesh,
    encoding: PlyEncoding,
    colors: Option<&[[u8; 3]]>,
    comments: &[String],
) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    match encoding {
        PlyEncoding::Ascii => writeln!(w, "format ascii 1.0")?,
        PlyEncoding::BinaryLittleEndian => writeln!(w, "format binary_little_endian 1.0")?,
    }
    for c in comments {
        writeln!(w, "comment {c}")?;
    }
    writeln!(w, "element vertex {}", mesh.n_vertices())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    if colors.is_some() {
        writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    writeln!(w, "element face {}", mesh.n_faces())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    match encoding {
        PlyEncoding::Ascii => {
            for (i, v) in mesh.vertices().iter().enumerate() {
                write!(w, "{} {} {}", v[0], v[1], v[2])?;
                if let Some(c) = colors {
                    write!(w, " {} {} {}", c[i][0], c[i][1], c[i][2])?;
                }
                writeln!(w)?;
            }
            for f in mesh.faces() {
                writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            for (i, v) in mesh.vertices().iter().enumerate() {
                for c in v {
                    w.write_all(&c.to_le_bytes())?;
                }
                if let Some(c) = colors {
                    w.write_all(&c[i])?;
                }
            }
            for f in mesh.faces() {
                w.write_all(&[3u8])?;
                for &i in f {
                    w.write_all(&(i as i32).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::shapes::{icosphere, single_triangle};
    use super::*;

    #[test]
    fn minimal_obj() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.obj");
        std::fs::write(&p, "# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1 2 3\n").unwrap();
        let m = load_mesh(&p, MeshFormat::Obj).unwrap();
        assert_eq!((m.n_vertices(), m.n_faces()), (3, 1));
        assert_eq!(m, single_triangle());
    }

    #[test]
    fn obj_zero_index_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.obj");
        std::fs::write(&p, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n").unwrap();
        assert!(matches!(load_mesh(&p, MeshFormat::Obj), Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn quads_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.obj");
        std::fs::write(&p, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        assert!(matches!(load_mesh(&p, MeshFormat::Obj), Err(Error::Validation(_))));
    }

    #[test]
    fn out_of_range_index_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ply");
        std::fs::write(
            &p,
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n\
             element face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 5\n",
        )
        .unwrap();
        assert!(matches!(load_mesh(&p, MeshFormat::Ply), Err(Error::Validation(_))));
    }

    #[test]
    fn icosphere_round_trips_in_every_encoding() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = icosphere(2);
        for (name, format, enc) in [
            ("a.obj", MeshFormat::Obj, PlyEncoding::Ascii),
            ("a.ply", MeshFormat::Ply, PlyEncoding::Ascii),
            ("b.ply", MeshFormat::Ply, PlyEncoding::BinaryLittleEndian),
        ] {
            let p = dir.path().join(name);
            save_mesh_with(&mesh, &p, format, enc, None, &[]).unwrap();
            assert_eq!(load_mesh(&p, format).unwrap(), mesh, "{name}");
        }
    }

    #[test]
    fn colors_and_comments_survive() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = icosphere(0);
        let colors: Vec<[u8; 3]> = (0..12).map(|i| [i as u8 * 20, 255 - i as u8, 7]).collect();
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian] {
            let p = dir.path().join("c.ply");
            save_mesh_with(&mesh, &p, MeshFormat::Ply, enc, Some(&colors), &["min 0.5 max 2".into()])
                .unwrap();
            let loaded = load_mesh_full(&p, MeshFormat::Ply).unwrap();
            assert_eq!(loaded.colors.as_deref(), Some(colors.as_slice()));
            assert_eq!(loaded.comments, vec!["min 0.5 max 2".to_string()]);
        }
    }

    #[test]
    fn wrong_color_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = icosphere(0);
        let colors = vec![[0u8; 3]; 11];
        let err = save_mesh(&mesh, dir.path().join("x.ply"), MeshFormat::Ply, Some(&colors));
        assert!(matches!(err, Err(Error::Validation(_))));
    }
}
