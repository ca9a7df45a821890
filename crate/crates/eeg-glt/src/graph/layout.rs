//! Electrode positions on a unit sphere.
//!
//! The built-in layout places the 64 retained 10-10 channels on an idealized
//! spherical head: +z through the vertex, +y toward the nasion, +x toward
//! the right preauricular point. Midline and ear-to-ear electrodes sit at
//! 18-degree steps on their great circles; each transverse row is spaced
//! equally along the circle through its two outer-ring electrodes and its
//! midline electrode. Channel order matches the recording headers so
//! adjacency rows line up with signal rows.

use super::GraphError;
use std::io::{BufRead, Write};

#[derive(Debug, Clone)]
pub struct ElectrodeLayout {
    pub names: Vec<String>,
    pub coords: Vec<[f64; 3]>,
    pub radius: f64,
}

type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn unit(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

/// Midline point at `deg` degrees from the vertex, positive toward the nasion.
fn midline(deg: f64) -> Vec3 {
    let r = deg.to_radians();
    [0.0, r.sin(), r.cos()]
}

/// Ear-to-ear point at `deg` degrees from the vertex, positive toward the left.
fn coronal(deg: f64) -> Vec3 {
    let r = deg.to_radians();
    [-r.sin(), 0.0, r.cos()]
}

/// Outer-ring point (inclination 72 degrees) at azimuth `deg` from the
/// nasion; `left` selects the hemisphere.
fn ring(deg: f64, left: bool) -> Vec3 {
    let incl = 72.0_f64.to_radians();
    let az = deg.to_radians();
    let x = incl.sin() * az.sin();
    [if left { -x } else { x }, incl.sin() * az.cos(), incl.cos()]
}

/// Points spaced equally along the spherical circle through `a`, `m`, `b`,
/// including the endpoints. `m` must lie between them; by construction all
/// returned points stay on the unit sphere.
fn arc_points(a: Vec3, m: Vec3, b: Vec3, segments: usize) -> Vec<Vec3> {
    let n = unit(cross(sub(a, m), sub(b, m)));
    let center = scale(n, dot(n, a));
    let rad = norm(sub(a, center));
    let u = unit(sub(a, center));
    let mut w = cross(n, u);
    let angle_of = |p: Vec3, w: Vec3| -> f64 {
        let d = sub(p, center);
        dot(d, w).atan2(dot(d, u))
    };
    // Orient so the sweep passes through m with a positive angle.
    if angle_of(m, w) < 0.0 {
        w = scale(w, -1.0);
    }
    let t_b = {
        let t = angle_of(b, w);
        if t <= 0.0 {
            t + 2.0 * std::f64::consts::PI
        } else {
            t
        }
    };
    (0..=segments)
        .map(|k| {
            let t = t_b * (k as f64) / (segments as f64);
            let (s, c) = t.sin_cos();
            [
                center[0] + rad * (u[0] * c + w[0] * s),
                center[1] + rad * (u[1] * c + w[1] * s),
                center[2] + rad * (u[2] * c + w[2] * s),
            ]
        })
        .collect()
}

impl ElectrodeLayout {
    /// The built-in 64-channel layout, in recording-header order.
    pub fn standard_64() -> Self {
        let mut named: Vec<(&str, Vec3)> = Vec::with_capacity(64);

        // Rows spanning left ring electrode -> midline -> right ring electrode.
        let rows: [(&[&str], Vec3, Vec3, Vec3); 5] = [
            (
                &["FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6"],
                ring(72.0, true),
                midline(18.0),
                ring(72.0, false),
            ),
            (
                &["C5", "C3", "C1", "Cz", "C2", "C4", "C6"],
                coronal(72.0),
                midline(0.0),
                coronal(-72.0),
            ),
            (
                &["CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6"],
                ring(108.0, true),
                midline(-18.0),
                ring(108.0, false),
            ),
            (
                &["F5", "F3", "F1", "Fz", "F2", "F4", "F6"],
                ring(54.0, true),
                midline(36.0),
                ring(54.0, false),
            ),
            (
                &["P5", "P3", "P1", "Pz", "P2", "P4", "P6"],
                ring(126.0, true),
                midline(-36.0),
                ring(126.0, false),
            ),
        ];
        let mut row_points = std::collections::HashMap::new();
        for (names, a, m, b) in rows {
            let pts = arc_points(a, m, b, 8);
            // pts[0] and pts[8] are the ring endpoints themselves.
            for (i, name) in names.iter().enumerate() {
                row_points.insert(*name, pts[i + 1]);
            }
        }
        let af = arc_points(ring(36.0, true), midline(54.0), ring(36.0, false), 4);
        row_points.insert("AF3", af[1]);
        row_points.insert("AF4", af[3]);
        let po = arc_points(ring(144.0, true), midline(-54.0), ring(144.0, false), 4);
        row_points.insert("PO3", po[1]);
        row_points.insert("PO4", po[3]);

        let push = |v: &mut Vec<(&str, Vec3)>, name: &'static str, p: Vec3| {
            v.push((name, p));
        };
        let v = &mut named;
        for n in ["FC5", "FC3", "FC1"] {
            push(v, n, row_points[n]);
        }
        push(v, "FCz", midline(18.0));
        for n in ["FC2", "FC4", "FC6"] {
            push(v, n, row_points[n]);
        }
        for n in ["C5", "C3", "C1"] {
            push(v, n, row_points[n]);
        }
        push(v, "Cz", midline(0.0));
        for n in ["C2", "C4", "C6"] {
            push(v, n, row_points[n]);
        }
        for n in ["CP5", "CP3", "CP1"] {
            push(v, n, row_points[n]);
        }
        push(v, "CPz", midline(-18.0));
        for n in ["CP2", "CP4", "CP6"] {
            push(v, n, row_points[n]);
        }
        push(v, "Fp1", ring(18.0, true));
        push(v, "Fpz", midline(72.0));
        push(v, "Fp2", ring(18.0, false));
        push(v, "AF7", ring(36.0, true));
        push(v, "AF3", row_points["AF3"]);
        push(v, "AFz", midline(54.0));
        push(v, "AF4", row_points["AF4"]);
        push(v, "AF8", ring(36.0, false));
        push(v, "F7", ring(54.0, true));
        for n in ["F5", "F3", "F1"] {
            push(v, n, row_points[n]);
        }
        push(v, "Fz", midline(36.0));
        for n in ["F2", "F4", "F6"] {
            push(v, n, row_points[n]);
        }
        push(v, "F8", ring(54.0, false));
        push(v, "FT7", ring(72.0, true));
        push(v, "FT8", ring(72.0, false));
        push(v, "T7", coronal(72.0));
        push(v, "T8", coronal(-72.0));
        push(v, "T9", coronal(90.0));
        push(v, "T10", coronal(-90.0));
        push(v, "TP7", ring(108.0, true));
        push(v, "TP8", ring(108.0, false));
        push(v, "P7", ring(126.0, true));
        for n in ["P5", "P3", "P1"] {
            push(v, n, row_points[n]);
        }
        push(v, "Pz", midline(-36.0));
        for n in ["P2", "P4", "P6"] {
            push(v, n, row_points[n]);
        }
        push(v, "P8", ring(126.0, false));
        push(v, "PO7", ring(144.0, true));
        push(v, "PO3", row_points["PO3"]);
        push(v, "POz", midline(-54.0));
        push(v, "PO4", row_points["PO4"]);
        push(v, "PO8", ring(144.0, false));
        push(v, "O1", ring(162.0, true));
        push(v, "Oz", midline(-72.0));
        push(v, "O2", ring(162.0, false));
        push(v, "Iz", midline(-90.0));

        let names = named.iter().map(|(n, _)| n.to_string()).collect();
        let coords = named.iter().map(|(_, p)| *p).collect();
        ElectrodeLayout { names, coords, radius: 1.0 }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Reads a `name,x,y,z` CSV (header optional). Coordinates are
    /// renormalized onto the sphere; deviations beyond 1e-6 are rejected.
    pub fn from_csv<R: BufRead>(reader: R, radius: f64) -> Result<Self, GraphError> {
        let mut names = Vec::new();
        let mut coords: Vec<Vec3> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if lineno == 0 && fields.get(1).map(|f| f.eq_ignore_ascii_case("x")) == Some(true) {
                continue;
            }
            if fields.len() != 4 {
                return Err(GraphError::Parse(format!(
                    "layout line {}: expected name,x,y,z",
                    lineno + 1
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| GraphError::Parse(format!("layout line {}: {e}", lineno + 1)))
            };
            names.push(fields[0].to_string());
            coords.push([parse(fields[1])?, parse(fields[2])?, parse(fields[3])?]);
        }
        for (i, p) in coords.iter_mut().enumerate() {
            let n = norm(*p);
            if (n - radius).abs() > 1e-6 {
                return Err(GraphError::OffSphereCoordinate { index: i, norm: n, radius });
            }
            *p = scale(*p, radius / n);
        }
        Ok(ElectrodeLayout { names, coords, radius })
    }

    pub fn to_csv<W: Write>(&self, mut out: W) -> Result<(), GraphError> {
        writeln!(out, "name,x,y,z")?;
        for (name, p) in self.names.iter().zip(&self.coords) {
            writeln!(out, "{name},{},{},{}", p[0], p[1], p[2])?;
        }
        Ok(())
    }

    /// Index of a channel by name; matching ignores case and the trailing
    /// dots some recording headers carry (`Fc5.` matches `FC5`).
    pub fn index_of(&self, label: &str) -> Option<usize> {
        let wanted = label.trim().trim_end_matches('.').to_ascii_lowercase();
        self.names
            .iter()
            .position(|n| n.to_ascii_lowercase() == wanted)
    }
}
