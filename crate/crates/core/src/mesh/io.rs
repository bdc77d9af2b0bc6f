//! Mesh file formats: OBJ (ASCII), STL (ASCII and binary) and PLY (ASCII and
//! binary). Polygonal OBJ faces are fan-triangulated.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ply_rs::parser::Parser;
use ply_rs::ply::{DefaultElement, Property};
use serde::{Deserialize, Serialize};

use super::{Mesh, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneratePolicy {
    /// Drop repeated-index and zero-area faces, counting them in the report.
    #[default]
    Drop,
    Error,
    /// Keep zero-area faces, dropping only faces with a repeated index.
    /// Connectivity then matches the file exactly.
    KeepZeroArea,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub degenerate: DegeneratePolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshFormat {
    Obj,
    StlAscii,
    StlBinary,
    PlyAscii,
    PlyBinary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub format: String,
    pub dropped_degenerate: usize,
}

pub fn load_mesh(path: &Path, options: &LoadOptions) -> Result<(Mesh, LoadReport)> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let raw = match ext.as_str() {
        "obj" => read_obj(path)?,
        "stl" => read_stl(path)?,
        "ply" => read_ply(path)?,
        other => return Err(Error::UnsupportedFormat(format!("'.{other}' ({})", path.display()))),
    };
    let (mut mesh, dropped) = Mesh::with_policy(raw.vertices, raw.faces, options.degenerate)?;
    if mesh.face_count() == 0 {
        return Err(Error::NoValidFaces);
    }
    if let Some(normals) = raw.normals {
        // Unusable normals are discarded rather than failing the load.
        if let Ok(m) = mesh.clone().with_normals(normals) {
            mesh = m;
        }
    }
    Ok((
        mesh,
        LoadReport {
            format: ext,
            dropped_degenerate: dropped,
        },
    ))
}

pub fn write_mesh(mesh: &Mesh, path: &Path, format: MeshFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        MeshFormat::Obj => write_obj(mesh, &mut w),
        MeshFormat::StlAscii => write_stl_ascii(mesh, &mut w),
        MeshFormat::StlBinary => stl_io::write_stl(&mut w, stl_triangles(mesh).iter()),
        MeshFormat::PlyAscii => write_ply(mesh, &mut w, PlyEncoding::Ascii),
        MeshFormat::PlyBinary => write_ply(mesh, &mut w, PlyEncoding::BinaryLittleEndian),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

struct RawMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    normals: Option<Vec<Vec3>>,
}

fn read_obj(path: &Path) -> Result<RawMesh> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut vertices = Vec::new();
    let mut polygons: Vec<Vec<i64>> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut xyz = [0.0; 3];
                for c in &mut xyz {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| parse_err(lineno + 1, "vertex needs 3 coordinates".into()))?;
                    *c = tok
                        .parse()
                        .map_err(|_| parse_err(lineno + 1, format!("bad coordinate '{tok}'")))?;
                }
                vertices.push(Vec3::from(xyz));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in tokens {
                    let idx = tok.split('/').next().unwrap_or("");
                    let i: i64 = idx
                        .parse()
                        .map_err(|_| parse_err(lineno + 1, format!("bad face index '{tok}'")))?;
                    poly.push(i);
                }
                if poly.len() < 3 {
                    return Err(parse_err(lineno + 1, "face needs at least 3 vertices".into()));
                }
                // Relative indices resolve against the vertices seen so far.
                let seen = vertices.len() as i64;
                for i in &mut poly {
                    if *i < 0 {
                        *i += seen + 1;
                    }
                }
                polygons.push(poly);
            }
            _ => {}
        }
    }
    let n = vertices.len();
    let mut faces = Vec::new();
    for poly in polygons {
        let mut idx = Vec::with_capacity(poly.len());
        for i in poly {
            if i < 1 || i as usize > n {
                return Err(Error::IndexOutOfRange {
                    face: faces.len(),
                    index: (i - 1).max(0) as usize,
                    vertex_count: n,
                });
            }
            idx.push((i - 1) as u32);
        }
        for k in 1..idx.len() - 1 {
            faces.push([idx[0], idx[k], idx[k + 1]]);
        }
    }
    Ok(RawMesh {
        vertices,
        faces,
        normals: None,
    })
}

fn write_obj<W: Write>(mesh: &Mesh, w: &mut W) -> std::io::Result<()> {
    for v in mesh.vertices() {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

fn read_stl(path: &Path) -> Result<RawMesh> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let indexed = stl_io::read_stl(&mut file).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let vertices = indexed
        .vertices
        .iter()
        .map(|v| Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64))
        .collect();
    let faces = indexed
        .faces
        .iter()
        .map(|t| t.vertices.map(|i| i as u32))
        .collect();
    Ok(RawMesh {
        vertices,
        faces,
        normals: None,
    })
}

fn stl_triangles(mesh: &Mesh) -> Vec<stl_io::Triangle> {
    let to32 = |v: &Vec3| stl_io::Vector::new([v.x as f32, v.y as f32, v.z as f32]);
    (0..mesh.face_count())
        .map(|f| {
            let tri = mesh.triangle(f);
            stl_io::Triangle {
                normal: to32(&mesh.face_normal(f)),
                vertices: [to32(&tri[0]), to32(&tri[1]), to32(&tri[2])],
            }
        })
        .collect()
}

fn write_stl_ascii<W: Write>(mesh: &Mesh, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "solid mesh")?;
    for f in 0..mesh.face_count() {
        let n = mesh.face_normal(f);
        writeln!(w, "  facet normal {:e} {:e} {:e}", n.x as f32, n.y as f32, n.z as f32)?;
        writeln!(w, "    outer loop")?;
        for v in mesh.triangle(f) {
            writeln!(w, "      vertex {:e} {:e} {:e}", v.x as f32, v.y as f32, v.z as f32)?;
        }
        writeln!(w, "    endloop")?;
        writeln!(w, "  endfacet")?;
    }
    writeln!(w, "endsolid mesh")
}

fn scalar_f64(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::Char(v) => v as f64,
        Property::UChar(v) => v as f64,
        Property::Short(v) => v as f64,
        Property::UShort(v) => v as f64,
        Property::Int(v) => v as f64,
        Property::UInt(v) => v as f64,
        Property::Float(v) => v as f64,
        Property::Double(v) => v,
        _ => return None,
    })
}

fn index_list(p: &Property) -> Option<Vec<i64>> {
    Some(match p {
        Property::ListChar(v) => v.iter().map(|&i| i as i64).collect(),
        Property::ListUChar(v) => v.iter().map(|&i| i as i64).collect(),
        Property::ListShort(v) => v.iter().map(|&i| i as i64).collect(),
        Property::ListUShort(v) => v.iter().map(|&i| i as i64).collect(),
        Property::ListInt(v) => v.iter().map(|&i| i as i64).collect(),
        Property::ListUInt(v) => v.iter().map(|&i| i as i64).collect(),
        _ => return None,
    })
}

fn read_ply(path: &Path) -> Result<RawMesh> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message,
    };
    let ply = Parser::<DefaultElement>::new()
        .read_ply(&mut BufReader::new(file))
        .map_err(|e| parse_err(e.to_string()))?;
    let verts = ply
        .payload
        .get("vertex")
        .ok_or_else(|| parse_err("missing 'vertex' element".into()))?;
    let coord = |e: &DefaultElement, key: &str| e.get(key).and_then(scalar_f64);
    let mut vertices = Vec::with_capacity(verts.len());
    let mut normals = Vec::with_capacity(verts.len());
    let mut has_normals = true;
    for e in verts {
        let (x, y, z) = match (coord(e, "x"), coord(e, "y"), coord(e, "z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err(parse_err("vertex lacks x/y/z".into())),
        };
        vertices.push(Vec3::new(x, y, z));
        match (coord(e, "nx"), coord(e, "ny"), coord(e, "nz")) {
            (Some(a), Some(b), Some(c)) => normals.push(Vec3::new(a, b, c)),
            _ => has_normals = false,
        }
    }
    let n = vertices.len();
    let mut faces = Vec::new();
    for (fi, e) in ply.payload.get("face").into_iter().flatten().enumerate() {
        let list = e
            .get("vertex_indices")
            .or_else(|| e.get("vertex_index"))
            .and_then(index_list)
            .ok_or_else(|| parse_err(format!("face {fi} lacks a vertex index list")))?;
        if list.len() < 3 {
            return Err(parse_err(format!("face {fi} has fewer than 3 vertices")));
        }
        if let Some(&bad) = list.iter().find(|&&i| i < 0 || i as usize >= n) {
            return Err(Error::IndexOutOfRange {
                face: fi,
                index: bad.max(0) as usize,
                vertex_count: n,
            });
        }
        for k in 1..list.len() - 1 {
            faces.push([list[0] as u32, list[k] as u32, list[k + 1] as u32]);
        }
    }
    Ok(RawMesh {
        vertices,
        faces,
        normals: (has_normals && n > 0).then_some(normals),
    })
}

// ply-rs 0.1.3 writes binary list lengths as byte counts, so PLY output is
// written directly; reading still goes through ply-rs.
fn write_ply<W: Write>(mesh: &Mesh, w: &mut W, encoding: PlyEncoding) -> std::io::Result<()> {
    let normals = mesh.normals();
    writeln!(w, "ply")?;
    match encoding {
        PlyEncoding::Ascii => writeln!(w, "format ascii 1.0")?,
        PlyEncoding::BinaryLittleEndian => writeln!(w, "format binary_little_endian 1.0")?,
    }
    writeln!(w, "element vertex {}", mesh.vertex_count())?;
    let mut keys = vec!["x", "y", "z"];
    if normals.is_some() {
        keys.extend(["nx", "ny", "nz"]);
    }
    for k in &keys {
        writeln!(w, "property float {k}")?;
    }
    writeln!(w, "element face {}", mesh.face_count())?;
    writeln!(w, "property list uchar uint vertex_indices")?;
    writeln!(w, "end_header")?;

    for (i, v) in mesh.vertices().iter().enumerate() {
        let mut row = vec![v.x as f32, v.y as f32, v.z as f32];
        if let Some(ns) = normals {
            row.extend([ns[i].x as f32, ns[i].y as f32, ns[i].z as f32]);
        }
        match encoding {
            PlyEncoding::Ascii => {
                let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
            PlyEncoding::BinaryLittleEndian => {
                for x in row {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
    }
    for f in mesh.faces() {
        match encoding {
            PlyEncoding::Ascii => writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?,
            PlyEncoding::BinaryLittleEndian => {
                w.write_all(&[3u8])?;
                for i in f {
                    w.write_all(&i.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}
