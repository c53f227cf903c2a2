use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Writes an ASCII PLY with `float x y z` vertex properties.
pub fn write_ply(mut w: impl Write, points: &[Vec3]) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property float {axis}")?;
    }
    writeln!(w, "end_header")?;
    for p in points {
        writeln!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)?;
    }
    Ok(())
}

/// Reads the vertex positions of an ASCII PLY. Extra vertex properties
/// after `x y z` are ignored; other elements must follow the vertices.
pub fn read_ply(r: impl BufRead) -> Result<Vec<Vec3>> {
    let mut lines = r.lines();
    let mut next = || -> Result<String> {
        lines.next().ok_or_else(|| Error::Format("unexpected end of PLY".into()))?.map_err(Error::from)
    };
    if next()?.trim() != "ply" {
        return Err(Error::Format("missing ply magic".into()));
    }
    let mut count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = next()?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", fmt, _] if *fmt != "ascii" => return Err(Error::Format(format!("unsupported PLY format {fmt}"))),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| Error::Format("bad vertex count".into()))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| Error::Format("no vertex element".into()))?;
    let pos = |name: &str| {
        props.iter().position(|p| p == name).ok_or_else(|| Error::Format(format!("missing property {name}")))
    };
    let (ix, iy, iz) = (pos("x")?, pos("y")?, pos("z")?);
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next()?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::Format(format!("bad number {t:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() < props.len() {
            return Err(Error::Format("short vertex line".into()));
        }
        points.push(Vec3::new(vals[ix], vals[iy], vals[iz]));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_f32_precision() {
        let pts = vec![Vec3::new(1.5, -2.25, 0.0), Vec3::new(0.1, 0.2, 0.3)];
        let mut buf = Vec::new();
        write_ply(&mut buf, &pts).unwrap();
        let back = read_ply(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in pts.iter().zip(&back) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn reads_extra_properties() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float y\nproperty float x\nproperty float z\nproperty uchar red\nend_header\n2 1 3 255\n";
        assert_eq!(read_ply(text.as_bytes()).unwrap(), vec![Vec3::new(1.0, 2.0, 3.0)]);
        assert!(read_ply("ply\nformat binary_little_endian 1.0\nend_header\n".as_bytes()).is_err());
    }
}
