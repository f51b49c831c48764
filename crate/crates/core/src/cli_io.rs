//! Configuration documents, history CSV files and mesh exports.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::driver::{AdaptiveConfig, AdaptiveHistory, LevelRecord, MeshFormat};
use crate::error::{Error, Result};
use crate::estimator::EstimatorReport;
use crate::mesh::Mesh;
use crate::scalar::Scalar;

pub const HISTORY_HEADER: &str =
    "level,n_elements,n_dofs,eta_total,error_V,marked_count,solver_iterations,wall_time_s";

/// Parses and validates a TOML configuration document.
pub fn parse_config(text: &str) -> Result<AdaptiveConfig> {
    let config: AdaptiveConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        Error::Config(msg.trim().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<AdaptiveConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Serializes a configuration to TOML, with every default spelled out.
pub fn config_to_string(config: &AdaptiveConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::Config(format!("cannot serialize configuration: {e}")))
}

/// 17 significant digits, enough to round-trip an `f64`.
fn fmt_real<T: Scalar>(v: T) -> String {
    format!("{:.16e}", v.as_f64())
}

pub fn history_row<T: Scalar>(r: &LevelRecord<T>, strip_timing: bool) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{},{},{},{},{},{},{},{}",
        r.level,
        r.n_elements,
        r.n_dofs,
        fmt_real(r.eta_total),
        r.error_v.map(fmt_real).unwrap_or_default(),
        r.marked_count,
        r.solver_iterations,
        if strip_timing {
            String::new()
        } else {
            fmt_real(r.wall_time_s)
        }
    );
    s
}

/// Writes the whole history at once (through a temporary file renamed into
/// place).
pub fn write_history<T: Scalar>(history: &AdaptiveHistory<T>, path: impl AsRef<Path>, strip_timing: bool) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from(HISTORY_HEADER);
    text.push('\n');
    for r in &history.levels {
        text.push_str(&history_row(r, strip_timing));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Appends one row per level and flushes, so an interrupted run leaves a
/// valid prefix of the history.
pub struct HistoryWriter {
    file: File,
    path: PathBuf,
    strip_timing: bool,
}

impl HistoryWriter {
    pub fn create(path: impl AsRef<Path>, strip_timing: bool) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        write_atomic(&path, format!("{HISTORY_HEADER}\n").as_bytes())?;
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(HistoryWriter {
            file,
            path,
            strip_timing,
        })
    }

    pub fn append<T: Scalar>(&mut self, record: &LevelRecord<T>) -> Result<()> {
        let line = history_row(record, self.strip_timing) + "\n";
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.sync_data())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a history written by [`write_history`] or [`HistoryWriter`].
pub fn read_history(path: impl AsRef<Path>) -> Result<AdaptiveHistory<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_history(&text)
}

pub fn parse_history(text: &str) -> Result<AdaptiveHistory<f64>> {
    let mut lines = text.lines();
    if lines.next() != Some(HISTORY_HEADER) {
        return Err(Error::Argument("history file lacks the expected header".into()));
    }
    let bad = |n: usize, what: &str| Error::Argument(format!("history line {}: bad {what}", n + 2));
    let mut levels = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(n, "field count"));
        }
        let int = |i: usize, what: &str| f[i].parse::<usize>().map_err(|_| bad(n, what));
        let real = |i: usize, what: &str| f[i].parse::<f64>().map_err(|_| bad(n, what));
        levels.push(LevelRecord {
            level: int(0, "level")?,
            n_elements: int(1, "n_elements")?,
            n_dofs: int(2, "n_dofs")?,
            eta_total: real(3, "eta_total")?,
            error_v: if f[4].is_empty() { None } else { Some(real(4, "error_V")?) },
            marked_count: int(5, "marked_count")?,
            solver_iterations: int(6, "solver_iterations")?,
            wall_time_s: if f[7].is_empty() { 0.0 } else { real(7, "wall_time_s")? },
        });
    }
    Ok(AdaptiveHistory { levels })
}

/// ASCII legacy VTK unstructured grid; triangles are cell type 5 and the
/// indicators, if given, become the cell scalar field `eta`.
pub fn mesh_to_vtk<T: Scalar>(mesh: &Mesh<T>, report: Option<&EstimatorReport<T>>) -> Result<String> {
    if let Some(r) = report {
        if r.len() != mesh.n_elements() {
            return Err(Error::Argument(format!(
                "{} indicators for {} elements",
                r.len(),
                mesh.n_elements()
            )));
        }
    }
    let mut s = String::new();
    let nv = mesh.n_vertices();
    let nt = mesh.n_elements();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "adaptive least-squares mesh, generation {}", mesh.generation());
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {nv} double");
    for p in mesh.vertices() {
        let _ = writeln!(s, "{} {} 0", fmt_real(p[0]), fmt_real(p[1]));
    }
    let _ = writeln!(s, "CELLS {nt} {}", 4 * nt);
    for t in mesh.elements() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        let _ = writeln!(s, "5");
    }
    if let Some(r) = report {
        let _ = writeln!(s, "CELL_DATA {nt}");
        let _ = writeln!(s, "SCALARS eta double 1");
        let _ = writeln!(s, "LOOKUP_TABLE default");
        for &v in &r.per_element {
            let _ = writeln!(s, "{}", fmt_real(v));
        }
    }
    Ok(s)
}

pub fn export_mesh_artifacts<T: Scalar>(
    mesh: &Mesh<T>,
    report: Option<&EstimatorReport<T>>,
    path: impl AsRef<Path>,
    format: MeshFormat,
) -> Result<()> {
    let text = match format {
        MeshFormat::Text => mesh.to_text(),
        MeshFormat::VtkLegacy => mesh_to_vtk(mesh, report)?,
    };
    write_atomic(path.as_ref(), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::run_exact_adaptive;
    use crate::mesh::{builtin_domain, BuiltinDomain};

    const MINIMAL: &str = r#"
domain = "unit_square"
[problem]
kind = "poisson"
f = "1"
"#;

    #[test]
    fn minimal_document_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.quadrature.assembly, 4);
        assert_eq!(c.quadrature.estimator_order(), 6);
        assert_eq!(c.marking.theta, 0.5);
        assert_eq!(c.stop.max_ndof, 50_000);
        assert_eq!(c.solver.kind, crate::driver::SolverKind::Exact);
    }

    #[test]
    fn theta_range_and_unknown_keys() {
        let bad = format!("{MINIMAL}[marking]\ntheta = 1.5\n");
        let e = parse_config(&bad).unwrap_err().to_string();
        assert!(e.contains("theta out of (0,1]"), "{e}");
        let unknown = format!("{MINIMAL}[stop]\nmax_dofs = 10\n");
        let e = parse_config(&unknown).unwrap_err().to_string();
        assert!(e.contains("max_dofs"), "{e}");
    }

    #[test]
    fn config_round_trip() {
        let c = parse_config(MINIMAL).unwrap();
        let text = config_to_string(&c).unwrap();
        assert_eq!(parse_config(&text).unwrap(), c);
    }

    #[test]
    fn history_round_trip() {
        let mut c = parse_config(MINIMAL).unwrap();
        c.stop.max_levels = Some(1);
        let h = run_exact_adaptive::<f64>(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        write_history(&h, &p, false).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), HISTORY_HEADER);
        let back = read_history(&p).unwrap();
        assert_eq!(back, h);
        assert!(back.levels[0].error_v.is_none());
    }

    #[test]
    fn appending_writer_matches_bulk_writer() {
        let mut c = parse_config(MINIMAL).unwrap();
        c.stop.max_levels = Some(4);
        let h = run_exact_adaptive::<f64>(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_history(&h, &a, true).unwrap();
        let mut w = HistoryWriter::create(&b, true).unwrap();
        for r in &h.levels {
            w.append(r).unwrap();
        }
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn text_and_vtk_exports() {
        let m = builtin_domain::<f64>(BuiltinDomain::UnitSquare);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        export_mesh_artifacts(&m, None, &p, MeshFormat::Text).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "4 2");
        assert_eq!(lines.len(), 7);
        let back = Mesh::<f64>::from_text(&text).unwrap();
        assert_eq!(back.elements(), m.elements());
        assert_eq!(back.vertices(), m.vertices());

        let r = EstimatorReport::from_indicators(vec![0.7, 0.7]);
        let v = dir.path().join("m.vtk");
        export_mesh_artifacts(&m, Some(&r), &v, MeshFormat::VtkLegacy).unwrap();
        let vtk = fs::read_to_string(&v).unwrap();
        assert!(vtk.contains("CELL_TYPES 2\n5\n5\n"));
        let tail: Vec<&str> = vtk.split("LOOKUP_TABLE default\n").nth(1).unwrap().lines().collect();
        assert_eq!(tail.len(), 2);
        assert!(vtk.contains("CELL_DATA 2\nSCALARS eta double 1"));
    }

    #[test]
    fn io_error_carries_path() {
        let m = builtin_domain::<f64>(BuiltinDomain::UnitSquare);
        let e = export_mesh_artifacts(&m, None, "/nonexistent-dir/x.txt", MeshFormat::Text).unwrap_err();
        assert!(e.to_string().contains("nonexistent-dir"));
    }
}
