//! Indexed triangle meshes with ASCII OBJ and binary PLY I/O.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(Self::Obj),
            "ply" => Some(Self::Ply),
            _ => None,
        }
    }
}

/// Triangle mesh. `normals` and `colors` are per-vertex and empty when absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub normals: Vec<[f64; 3]>,
    /// RGB in [0, 1].
    pub colors: Vec<[f64; 3]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl TriangleMesh {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.vertices.len();
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v as usize >= n) {
                return Err(GeometryError::Invalid(format!("face {i} indexes past {n} vertices")));
            }
        }
        for (what, len) in [("normals", self.normals.len()), ("colors", self.colors.len())] {
            if len != 0 && len != n {
                return Err(GeometryError::Invalid(format!("{len} {what} for {n} vertices")));
            }
        }
        Ok(())
    }

    /// Unnormalized face normal (twice the area).
    pub fn face_normal(&self, f: usize) -> [f64; 3] {
        let [a, b, c] = self.faces[f].map(|v| self.vertices[v as usize]);
        cross(sub(b, a), sub(c, a))
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| 0.5 * norm(self.face_normal(f))).sum()
    }

    fn edge_set(&self) -> HashSet<(u32, u32)> {
        self.faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect()
    }

    /// `V − E + F` counting only vertices referenced by faces.
    pub fn euler_characteristic(&self) -> i64 {
        let used: HashSet<u32> = self.faces.iter().flatten().copied().collect();
        used.len() as i64 - self.edge_set().len() as i64 + self.faces.len() as i64
    }

    /// Every directed edge appears once and its reverse once.
    pub fn is_closed_and_consistent(&self) -> bool {
        let mut directed = HashSet::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                if !directed.insert((a, b)) {
                    return false;
                }
            }
        }
        directed.iter().all(|&(a, b)| directed.contains(&(b, a)))
    }

    /// Area-weighted vertex normals.
    pub fn compute_normals(&mut self) {
        let mut acc = vec![[0.0; 3]; self.vertices.len()];
        for f in 0..self.faces.len() {
            let n = self.face_normal(f);
            for &v in &self.faces[f] {
                for a in 0..3 {
                    acc[v as usize][a] += n[a];
                }
            }
        }
        self.normals = acc
            .into_iter()
            .map(|n| {
                let l = norm(n);
                if l > 0.0 {
                    n.map(|v| v / l)
                } else {
                    n
                }
            })
            .collect();
    }
}

pub fn export_mesh(mesh: &TriangleMesh, path: &Path, format: MeshFormat) -> Result<(), GeometryError> {
    mesh.validate()?;
    let mut buf = Vec::new();
    match format {
        MeshFormat::Obj => write_obj(mesh, &mut buf).expect("writing to memory"),
        MeshFormat::Ply => write_ply(mesh, &mut buf).expect("writing to memory"),
    }
    std::fs::write(path, buf).map_err(|e| GeometryError::io(path, e))
}

pub fn import_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh, GeometryError> {
    let file = std::fs::File::open(path).map_err(|e| GeometryError::io(path, e))?;
    let mesh = match format {
        MeshFormat::Obj => read_obj(BufReader::new(file))?,
        MeshFormat::Ply => read_ply(BufReader::new(file))?,
    };
    mesh.validate()?;
    Ok(mesh)
}

/// ASCII OBJ. Vertex colors use the common `v x y z r g b` extension.
pub fn write_obj<W: Write>(mesh: &TriangleMesh, w: &mut W) -> std::io::Result<()> {
    for (i, v) in mesh.vertices.iter().enumerate() {
        write!(w, "v {} {} {}", v[0], v[1], v[2])?;
        if let Some(c) = mesh.colors.get(i) {
            write!(w, " {} {} {}", c[0], c[1], c[2])?;
        }
        writeln!(w)?;
    }
    for n in &mesh.normals {
        writeln!(w, "vn {} {} {}", n[0], n[1], n[2])?;
    }
    let with_normals = !mesh.normals.is_empty();
    for f in &mesh.faces {
        let [a, b, c] = f.map(|v| v + 1);
        if with_normals {
            writeln!(w, "f {a}//{a} {b}//{b} {c}//{c}")?;
        } else {
            writeln!(w, "f {a} {b} {c}")?;
        }
    }
    Ok(())
}

pub fn read_obj<R: BufRead>(r: R) -> Result<TriangleMesh, GeometryError> {
    let mut mesh = TriangleMesh::default();
    let parse_err = |line: usize, msg: &str| GeometryError::Parse(format!("obj line {}: {msg}", line + 1));
    for (ln, line) in r.lines().enumerate() {
        let line = line.map_err(|e| GeometryError::Parse(e.to_string()))?;
        let mut it = line.split_whitespace();
        let Some(tag) = it.next() else { continue };
        let rest: Vec<&str> = it.collect();
        let floats = |xs: &[&str]| -> Result<Vec<f64>, GeometryError> {
            xs.iter()
                .map(|s| s.parse::<f64>().map_err(|_| parse_err(ln, "bad number")))
                .collect()
        };
        match tag {
            "v" => {
                let v = floats(&rest)?;
                match v.len() {
                    3 => mesh.vertices.push([v[0], v[1], v[2]]),
                    6 => {
                        mesh.vertices.push([v[0], v[1], v[2]]);
                        mesh.colors.push([v[3], v[4], v[5]]);
                    }
                    _ => return Err(parse_err(ln, "vertex needs 3 or 6 values")),
                }
            }
            "vn" => {
                let v = floats(&rest)?;
                if v.len() != 3 {
                    return Err(parse_err(ln, "normal needs 3 values"));
                }
                mesh.normals.push([v[0], v[1], v[2]]);
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(parse_err(ln, "only triangles are supported"));
                }
                let mut f = [0u32; 3];
                for (k, s) in rest.iter().enumerate() {
                    let idx = s.split('/').next().unwrap_or("");
                    let i: u32 = idx.parse().map_err(|_| parse_err(ln, "bad index"))?;
                    if i == 0 {
                        return Err(parse_err(ln, "indices are 1-based"));
                    }
                    f[k] = i - 1;
                }
                mesh.faces.push(f);
            }
            "#" => {}
            _ => {}
        }
    }
    Ok(mesh)
}

/// Binary little-endian PLY with double-precision positions and normals and
/// 8-bit colors.
pub fn write_ply<W: Write>(mesh: &TriangleMesh, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    for p in ["x", "y", "z"] {
        writeln!(w, "property double {p}")?;
    }
    let with_normals = !mesh.normals.is_empty();
    let with_colors = !mesh.colors.is_empty();
    if with_normals {
        for p in ["nx", "ny", "nz"] {
            writeln!(w, "property double {p}")?;
        }
    }
    if with_colors {
        for p in ["red", "green", "blue"] {
            writeln!(w, "property uchar {p}")?;
        }
    }
    writeln!(w, "element face {}", mesh.faces.len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    for i in 0..mesh.vertices.len() {
        for v in mesh.vertices[i] {
            w.write_all(&v.to_le_bytes())?;
        }
        if with_normals {
            for v in mesh.normals[i] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        if with_colors {
            for v in mesh.colors[i] {
                w.write_all(&[(v.clamp(0.0, 1.0) * 255.0).round() as u8])?;
            }
        }
    }
    for f in &mesh.faces {
        w.write_all(&[3u8])?;
        for v in f {
            w.write_all(&(*v as i32).to_le_bytes())?;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Scalar {
    U8,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "uchar" | "uint8" => Self::U8,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn read<R: Read>(self, r: &mut R) -> std::io::Result<f64> {
        Ok(match self {
            Self::U8 => {
                let mut b = [0u8; 1];
                r.read_exact(&mut b)?;
                b[0] as f64
            }
            Self::I32 => {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                i32::from_le_bytes(b) as f64
            }
            Self::U32 => {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                u32::from_le_bytes(b) as f64
            }
            Self::F32 => {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                f32::from_le_bytes(b) as f64
            }
            Self::F64 => {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                f64::from_le_bytes(b)
            }
        })
    }
}

/// Reads binary little-endian PLY files with vertex and triangle elements.
pub fn read_ply<R: BufRead>(mut r: R) -> Result<TriangleMesh, GeometryError> {
    let perr = |m: String| GeometryError::Parse(format!("ply: {m}"));
    let mut line = String::new();
    let mut header = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line).map_err(|e| perr(e.to_string()))? == 0 {
            return Err(perr("missing end_header".into()));
        }
        let l = line.trim().to_string();
        if l == "end_header" {
            break;
        }
        header.push(l);
    }
    if header.first().map(String::as_str) != Some("ply") {
        return Err(perr("missing magic".into()));
    }
    if !header.iter().any(|l| l == "format binary_little_endian 1.0") {
        return Err(perr("only binary_little_endian 1.0 is supported".into()));
    }
    let mut n_vert = 0usize;
    let mut n_face = 0usize;
    let mut vprops: Vec<(String, Scalar)> = Vec::new();
    let mut face_list: Option<(Scalar, Scalar)> = None;
    let mut current = "";
    for l in &header {
        let t: Vec<&str> = l.split_whitespace().collect();
        match t.as_slice() {
            ["element", "vertex", n] => {
                current = "vertex";
                n_vert = n.parse().map_err(|_| perr(format!("bad count {n}")))?;
            }
            ["element", "face", n] => {
                current = "face";
                n_face = n.parse().map_err(|_| perr(format!("bad count {n}")))?;
            }
            ["element", other, _] => return Err(perr(format!("unsupported element {other}"))),
            ["property", "list", c, i, _] if current == "face" => {
                let c = Scalar::parse(c).ok_or_else(|| perr(format!("bad type {c}")))?;
                let i = Scalar::parse(i).ok_or_else(|| perr(format!("bad type {i}")))?;
                face_list = Some((c, i));
            }
            ["property", ty, name] if current == "vertex" => {
                let s = Scalar::parse(ty).ok_or_else(|| perr(format!("bad type {ty}")))?;
                vprops.push((name.to_string(), s));
            }
            _ => {}
        }
    }
    let find = |n: &str| vprops.iter().position(|(p, _)| p == n);
    let pos = ["x", "y", "z"].map(find);
    let nrm = ["nx", "ny", "nz"].map(find);
    let col = ["red", "green", "blue"].map(find);
    if pos.iter().any(Option::is_none) {
        return Err(perr("vertex positions missing".into()));
    }
    let mut mesh = TriangleMesh::default();
    let io = |e: std::io::Error| perr(e.to_string());
    let mut vals = vec![0.0; vprops.len()];
    for _ in 0..n_vert {
        for (k, (_, s)) in vprops.iter().enumerate() {
            vals[k] = s.read(&mut r).map_err(io)?;
        }
        mesh.vertices.push(pos.map(|p| vals[p.unwrap()]));
        if nrm.iter().all(Option::is_some) {
            mesh.normals.push(nrm.map(|p| vals[p.unwrap()]));
        }
        if col.iter().all(Option::is_some) {
            mesh.colors.push(col.map(|p| vals[p.unwrap()] / 255.0));
        }
    }
    if n_face > 0 {
        let (cnt, idx) = face_list.ok_or_else(|| perr("face list property missing".into()))?;
        for _ in 0..n_face {
            if cnt.read(&mut r).map_err(io)? != 3.0 {
                return Err(perr("only triangles are supported".into()));
            }
            let mut f = [0u32; 3];
            for v in &mut f {
                let i = idx.read(&mut r).map_err(io)?;
                if i < 0.0 {
                    return Err(perr("negative index".into()));
                }
                *v = i as u32;
            }
            mesh.faces.push(f);
        }
    }
    Ok(mesh)
}
