//! File exports: atomic writes, PLY voxel clouds and SVG top-down figures.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::world::{CellState, VoxelGrid};
use crate::{Result, Vec3};

/// Write `bytes` to a sibling temp file, then rename it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = match dir {
        Some(d) => d.join(format!(".{name}.tmp")),
        None => Path::new(&format!(".{name}.tmp")).to_path_buf(),
    };
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// ASCII PLY point cloud with one scalar property per vertex.
pub fn ply_points(points: &[(Vec3, f64)], scalar_name: &str) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    let _ = writeln!(s, "property float {scalar_name}");
    s.push_str("end_header\n");
    for (p, v) in points {
        let _ = writeln!(s, "{:.4} {:.4} {:.4} {}", p.x, p.y, p.z, v);
    }
    s
}

/// Occupied voxel centers tagged with their state code (0 unknown, 1 free, 2 occupied).
pub fn ply_grid_states(grid: &VoxelGrid) -> String {
    let geo = grid.geometry();
    let pts: Vec<(Vec3, f64)> = (0..grid.len())
        .filter(|&i| grid.state_linear(i) == CellState::Occupied)
        .map(|i| (geo.center_linear(i), 2.0))
        .collect();
    ply_points(&pts, "state")
}

/// Minimal SVG canvas in world meters (x right, y up).
pub struct SvgCanvas {
    min: Vec3,
    max: Vec3,
    scale: f64,
    body: String,
}

impl SvgCanvas {
    pub fn new(min: Vec3, max: Vec3, px_per_m: f64) -> Self {
        SvgCanvas {
            min,
            max,
            scale: px_per_m,
            body: String::new(),
        }
    }

    fn tx(&self, x: f64) -> f64 {
        (x - self.min.x) * self.scale
    }

    fn ty(&self, y: f64) -> f64 {
        (self.max.y - y) * self.scale
    }

    pub fn rect(&mut self, x0: f64, y0: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            self.tx(x0),
            self.ty(y0 + h),
            w * self.scale,
            h * self.scale,
            fill
        );
    }

    pub fn circle(&mut self, c: &Vec3, r_m: f64, fill: &str, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="{}" stroke="{}"/>"#,
            self.tx(c.x),
            self.ty(c.y),
            r_m * self.scale,
            fill,
            stroke
        );
    }

    pub fn line(&mut self, a: &Vec3, b: &Vec3, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="{}"/>"#,
            self.tx(a.x),
            self.ty(a.y),
            self.tx(b.x),
            self.ty(b.y),
            stroke,
            width
        );
    }

    pub fn polyline(&mut self, pts: &[Vec3], stroke: &str, width: f64) {
        if pts.len() < 2 {
            return;
        }
        let mut d = String::new();
        for p in pts {
            let _ = write!(d, "{:.2},{:.2} ", self.tx(p.x), self.ty(p.y));
        }
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="{}"/>"#,
            d.trim_end(),
            stroke,
            width
        );
    }

    pub fn text(&mut self, at: &Vec3, size_px: f64, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{:.2}" y="{:.2}" font-size="{}" font-family="sans-serif">{}</text>"#,
            self.tx(at.x),
            self.ty(at.y),
            size_px,
            content
        );
    }

    pub fn finish(self) -> String {
        let w = (self.max.x - self.min.x) * self.scale;
        let h = (self.max.y - self.min.y) * self.scale;
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.2} {h:.2}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body
        )
    }
}

/// Draw the occupied cells of one horizontal slice (column-projected).
pub fn draw_grid_slice(canvas: &mut SvgCanvas, grid: &VoxelGrid, z_index: usize, fill: &str) {
    let geo = grid.geometry();
    let [nx, ny, _] = geo.dims();
    let res = geo.resolution();
    for y in 0..ny {
        for x in 0..nx {
            if grid.state([x, y, z_index]) == CellState::Occupied {
                let c = geo.center([x, y, z_index]);
                canvas.rect(c.x - 0.5 * res, c.y - 0.5 * res, res, res, fill);
            }
        }
    }
}
