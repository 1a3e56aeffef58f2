//! On-disk formats.
//!
//! * volumes: raw little-endian f32, x fastest, with a JSON sidecar at
//!   `<path>.json` holding `{dims, spacing, field, time, member}`;
//! * ensembles: manifest JSON `{field, time, members: [{path, member_id}]}`,
//!   member paths relative to the manifest;
//! * summaries and probabilistic maps: a little-endian `u32` header length,
//!   the JSON header, then f32 planes in declared order;
//! * destination maps: an i32 label plane plus a JSON maxima list;
//! * images: binary PPM (P6), or PNG when the path ends in `.png`.

use std::fs;
use std::path::{Path, PathBuf};

use eddyscope_core::grid::{Dims, Ensemble, ScalarGrid};
use eddyscope_core::image::Image;
use eddyscope_core::morse::{MorseComplex, PersistenceGraph};
use eddyscope_core::noise::{DistributionSummary, SummaryKind, GMM_COMPONENTS};
use eddyscope_core::pmap::ProbabilisticMap;
use eddyscope_core::render::Camera;
use eddyscope_core::tf::{ControlPoint, TransferFunction};
use serde::{Deserialize, Serialize};

use crate::error::{Error, InFile, Result};

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read(path)?).map_err(|e| Error::format(path, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    write(path, &bytes)
}

// ----- volumes -----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dims: [usize; 3],
    #[serde(default = "unit_spacing")]
    pub spacing: [f64; 3],
    pub field: String,
    #[serde(default)]
    pub time: u32,
    #[serde(default)]
    pub member: u32,
}

fn unit_spacing() -> [f64; 3] {
    [1.0; 3]
}

pub fn sidecar_path(raw: &Path) -> PathBuf {
    let mut s = raw.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Reads a raw f32 volume described by `meta`.
pub fn read_raw(path: &Path, meta: &Sidecar) -> Result<ScalarGrid> {
    let bytes = read(path)?;
    let [nx, ny, nz] = meta.dims;
    let dims = Dims::new(nx, ny, nz).in_file(path)?;
    if bytes.len() != 4 * dims.len() {
        return Err(Error::file(
            path,
            eddyscope_core::Error::Dimension(format!(
                "{} bytes cannot hold {nx}x{ny}x{nz} f32 samples ({} bytes)",
                bytes.len(),
                4 * dims.len()
            )),
        ));
    }
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let grid = ScalarGrid::new(dims, values).in_file(path)?.with_spacing(meta.spacing).in_file(path)?;
    Ok(grid.with_meta(&meta.field, meta.time, meta.member))
}

/// Reads a raw volume and its sidecar.
pub fn load_raw_volume(path: &Path) -> Result<ScalarGrid> {
    let meta: Sidecar = read_json(&sidecar_path(path))?;
    read_raw(path, &meta)
}

pub fn raw_bytes(grid: &ScalarGrid) -> Vec<u8> {
    grid.values().iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes the raw samples and the sidecar.
pub fn write_raw(path: &Path, grid: &ScalarGrid) -> Result<()> {
    write(path, &raw_bytes(grid))?;
    let d = grid.dims();
    let meta = Sidecar {
        dims: [d.nx, d.ny, d.nz],
        spacing: grid.spacing(),
        field: grid.field_name.clone(),
        time: grid.time_index,
        member: grid.member_id,
    };
    write_json(&sidecar_path(path), &meta)
}

// ----- manifests -----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub member_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub field: String,
    pub time: u32,
    pub members: Vec<ManifestEntry>,
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let m: Manifest = read_json(path)?;
    if m.members.is_empty() {
        return Err(Error::format(path, "manifest lists no members"));
    }
    Ok(m)
}

/// Loads every member of a manifest. Sidecars must agree with the
/// manifest's field and time; the manifest's member ids win.
pub fn load_ensemble(manifest_path: &Path) -> Result<Ensemble> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let mut grids = Vec::with_capacity(manifest.members.len());
    for entry in &manifest.members {
        let path = base.join(&entry.path);
        let meta: Sidecar = read_json(&sidecar_path(&path))?;
        if meta.field != manifest.field || meta.time != manifest.time {
            return Err(Error::format(
                &path,
                format!(
                    "sidecar declares {}@t{} but the manifest is {}@t{}",
                    meta.field, meta.time, manifest.field, manifest.time
                ),
            ));
        }
        let grid = read_raw(&path, &meta)?;
        grids.push(grid.with_meta(&manifest.field, manifest.time, entry.member_id));
    }
    Ensemble::new(grids).in_file(manifest_path)
}

/// Writes members as `<stem>_m<id>.raw` beside `manifest_path`.
pub fn write_ensemble(manifest_path: &Path, ensemble: &Ensemble) -> Result<()> {
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let stem = manifest_path.file_stem().and_then(|s| s.to_str()).unwrap_or("member");
    let mut entries = Vec::with_capacity(ensemble.len());
    for g in ensemble.members() {
        let name = PathBuf::from(format!("{stem}_m{:03}.raw", g.member_id));
        write_raw(&base.join(&name), g)?;
        entries.push(ManifestEntry { path: name, member_id: g.member_id });
    }
    let manifest =
        Manifest { field: ensemble.field_name().to_string(), time: ensemble.time_index(), members: entries };
    write_json(manifest_path, &manifest)
}

// ----- framed binary files -----

fn frame(header: &serde_json::Value, planes: &[Vec<f32>]) -> Vec<u8> {
    let h = serde_json::to_vec(header).expect("serializable");
    let mut out = Vec::with_capacity(4 + h.len() + planes.iter().map(|p| 4 * p.len()).sum::<usize>());
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(&h);
    for p in planes {
        out.extend(p.iter().flat_map(|v| v.to_le_bytes()));
    }
    out
}

fn unframe(path: &Path, bytes: &[u8]) -> Result<(serde_json::Value, Vec<f32>)> {
    if bytes.len() < 4 {
        return Err(Error::format(path, "file too short for a header"));
    }
    let n = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    let rest = &bytes[4..];
    if rest.len() < n || !(rest.len() - n).is_multiple_of(4) {
        return Err(Error::format(path, "truncated header or payload"));
    }
    let header = serde_json::from_slice(&rest[..n]).map_err(|e| Error::format(path, format!("header: {e}")))?;
    let payload = rest[n..].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((header, payload))
}

fn split_planes(path: &Path, payload: Vec<f32>, planes: usize, len: usize) -> Result<Vec<Vec<f32>>> {
    if payload.len() != planes * len {
        return Err(Error::format(
            path,
            format!("payload holds {} values, header declares {planes} planes of {len}", payload.len()),
        ));
    }
    Ok(payload.chunks_exact(len.max(1)).map(<[f32]>::to_vec).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryHeader {
    pub model: String,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub planes: Vec<String>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(default)]
    pub field: String,
    #[serde(default)]
    pub time: u32,
    #[serde(default)]
    pub members: usize,
}

impl SummaryHeader {
    pub fn of(summary: &DistributionSummary, field: &str, time: u32, members: usize) -> Self {
        let kind = summary.kind();
        let d = summary.dims();
        Self {
            model: kind.model().name().to_string(),
            dims: [d.nx, d.ny, d.nz],
            spacing: summary.spacing(),
            planes: kind.plane_names(),
            k: matches!(kind, SummaryKind::Gmm).then_some(GMM_COMPONENTS),
            q: match kind {
                SummaryKind::Quantile { levels } => Some(levels),
                _ => None,
            },
            field: field.to_string(),
            time,
            members,
        }
    }

    fn kind(&self, path: &Path) -> Result<SummaryKind> {
        let model = self.model.parse().in_file(path)?;
        Ok(match model {
            eddyscope_core::ModelKind::Mean => SummaryKind::Mean,
            eddyscope_core::ModelKind::Uniform => SummaryKind::Uniform,
            eddyscope_core::ModelKind::Gaussian => SummaryKind::Gaussian,
            eddyscope_core::ModelKind::Gmm => {
                if self.k.is_some_and(|k| k != GMM_COMPONENTS) {
                    return Err(Error::format(path, format!("only K = {GMM_COMPONENTS} mixtures are supported")));
                }
                SummaryKind::Gmm
            }
            eddyscope_core::ModelKind::Quantile => SummaryKind::Quantile {
                levels: self.q.ok_or_else(|| Error::format(path, "quantile summary without Q"))?,
            },
        })
    }
}

pub fn summary_bytes(summary: &DistributionSummary, header: &SummaryHeader) -> Vec<u8> {
    frame(&serde_json::to_value(header).expect("serializable"), &summary.planes())
}

pub fn write_summary(path: &Path, summary: &DistributionSummary, header: &SummaryHeader) -> Result<()> {
    write(path, &summary_bytes(summary, header))
}

pub fn read_summary(path: &Path) -> Result<(DistributionSummary, SummaryHeader)> {
    let (header, payload) = unframe(path, &read(path)?)?;
    let header: SummaryHeader =
        serde_json::from_value(header).map_err(|e| Error::format(path, format!("header: {e}")))?;
    let kind = header.kind(path)?;
    let [nx, ny, nz] = header.dims;
    let dims = Dims::new(nx, ny, nz).in_file(path)?;
    let planes = split_planes(path, payload, kind.params_per_voxel(), dims.len())?;
    let summary = DistributionSummary::from_planes(kind, dims, header.spacing, &planes).in_file(path)?;
    Ok((summary, header))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub id: u32,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmapHeader {
    pub dims: [usize; 2],
    #[serde(rename = "M")]
    pub members: usize,
    pub labels: Vec<LabelEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
}

pub fn pmap_bytes(pm: &ProbabilisticMap, palette: &[[u8; 3]], strategy: Option<&str>) -> Vec<u8> {
    let header = PmapHeader {
        dims: [pm.width(), pm.height()],
        members: pm.members(),
        labels: (0..pm.label_count()).map(|l| LabelEntry { id: l as u32, color: palette[l] }).collect(),
        strategy: strategy.map(str::to_string),
    };
    frame(&serde_json::to_value(header).expect("serializable"), &pm.probability_planes())
}

pub fn write_pmap(path: &Path, pm: &ProbabilisticMap, palette: &[[u8; 3]], strategy: Option<&str>) -> Result<()> {
    write(path, &pmap_bytes(pm, palette, strategy))
}

/// The map and its palette, indexed by label id.
pub fn read_pmap(path: &Path) -> Result<(ProbabilisticMap, Vec<[u8; 3]>, PmapHeader)> {
    let (header, payload) = unframe(path, &read(path)?)?;
    let header: PmapHeader =
        serde_json::from_value(header).map_err(|e| Error::format(path, format!("header: {e}")))?;
    let [nx, ny] = header.dims;
    let planes = split_planes(path, payload, header.labels.len(), nx * ny)?;
    let pm = ProbabilisticMap::from_probability_planes(nx, ny, header.members, &planes).in_file(path)?;
    let mut palette = vec![[0u8; 3]; header.labels.len()];
    for l in &header.labels {
        let slot = palette
            .get_mut(l.id as usize)
            .ok_or_else(|| Error::format(path, format!("label id {} out of range", l.id)))?;
        *slot = l.color;
    }
    Ok((pm, palette, header))
}

// ----- Morse outputs -----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximumRecord {
    pub id: usize,
    pub x: usize,
    pub y: usize,
    pub value: f64,
    pub persistence: f64,
}

/// Writes `<prefix>.labels.i32` and `<prefix>.maxima.json`.
pub fn write_destinations(prefix: &Path, complex: &MorseComplex) -> Result<()> {
    let d = &complex.destinations;
    let labels: Vec<u8> = d.labels.iter().flat_map(|&l| (l as i32).to_le_bytes()).collect();
    write(&with_suffix(prefix, ".labels.i32"), &labels)?;
    let maxima: Vec<MaximumRecord> = d
        .maxima
        .iter()
        .zip(&complex.pairing.maxima)
        .enumerate()
        .map(|(id, (m, p))| MaximumRecord {
            id,
            x: m.pixel % d.nx,
            y: m.pixel / d.nx,
            value: m.value,
            persistence: p.persistence,
        })
        .collect();
    write_json(&with_suffix(prefix, ".maxima.json"), &serde_json::json!({ "dims": [d.nx, d.ny], "maxima": maxima }))
}

pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// `threshold,count` rows: zero, then every distinct persistence.
pub fn persistence_csv(graph: &PersistenceGraph) -> String {
    let mut out = String::from("threshold,count\n");
    for (t, c) in graph.rows() {
        out.push_str(&format!("{t},{c}\n"));
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write(path, text.as_bytes())
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)
}

pub fn read_json_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    read_json(path)
}

// ----- transfer functions and cameras -----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointJson {
    pub s: f64,
    pub r: f64,
    pub g: f64,
    pub b: f64,
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TfJson {
    pub points: Vec<PointJson>,
}

impl TfJson {
    pub fn of(tf: &TransferFunction) -> Self {
        Self {
            points: tf
                .points()
                .iter()
                .map(|p| PointJson { s: p.s, r: p.rgba[0], g: p.rgba[1], b: p.rgba[2], a: p.rgba[3] })
                .collect(),
        }
    }

    pub fn build(&self) -> eddyscope_core::Result<TransferFunction> {
        TransferFunction::new(self.points.iter().map(|p| ControlPoint::new(p.s, p.r, p.g, p.b, p.a)).collect())
    }
}

/// Parses and validates TF JSON; messages name the offending field.
pub fn parse_tf(json: &serde_json::Value) -> std::result::Result<TransferFunction, String> {
    let tf: TfJson = serde_json::from_value(json.clone()).map_err(|e| format!("tf: {e}"))?;
    tf.build().map_err(|e| format!("tf.points: {e}"))
}

pub fn read_tf(path: &Path) -> Result<TransferFunction> {
    let v: serde_json::Value = read_json(path)?;
    parse_tf(&v).map_err(|m| Error::format(path, m))
}

/// Camera JSON. `width`/`height` may be left out and supplied by the
/// caller (CLI flags or render request fields).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraJson {
    pub eye: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    pub fov_y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
}

pub const DEFAULT_IMAGE_SIZE: usize = 256;

impl CameraJson {
    pub fn of(c: &Camera) -> Self {
        Self {
            eye: c.eye,
            look_at: c.look_at,
            up: c.up,
            fov_y: c.fov_y_deg,
            width: Some(c.width),
            height: Some(c.height),
        }
    }

    /// Explicit sizes win over the JSON's own.
    pub fn build(&self, width: Option<usize>, height: Option<usize>) -> eddyscope_core::Result<Camera> {
        let c = Camera {
            eye: self.eye,
            look_at: self.look_at,
            up: self.up,
            fov_y_deg: self.fov_y,
            width: width.or(self.width).unwrap_or(DEFAULT_IMAGE_SIZE),
            height: height.or(self.height).unwrap_or(DEFAULT_IMAGE_SIZE),
        };
        c.validate()?;
        Ok(c)
    }
}

pub fn parse_camera(
    json: &serde_json::Value,
    width: Option<usize>,
    height: Option<usize>,
) -> std::result::Result<Camera, String> {
    let c: CameraJson = serde_json::from_value(json.clone()).map_err(|e| format!("camera: {e}"))?;
    c.build(width, height).map_err(|e| format!("camera: {e}"))
}

pub fn read_camera(path: &Path, width: Option<usize>, height: Option<usize>) -> Result<Camera> {
    let v: serde_json::Value = read_json(path)?;
    parse_camera(&v, width, height).map_err(|m| Error::format(path, m))
}

// ----- images -----

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(&img.rgb_bytes());
    out
}

pub fn encode_png(img: &Image) -> Vec<u8> {
    let mut out = Vec::new();
    let buf = image::RgbaImage::from_raw(img.width() as u32, img.height() as u32, img.pixels().to_vec())
        .expect("sized buffer");
    buf.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png).expect("in-memory PNG");
    out
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    write(path, &if is_png(path) { encode_png(img) } else { encode_ppm(img) })
}

/// Reads P6 PPM (maxval 255) or PNG.
pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = read(path)?;
    if bytes.starts_with(b"P6") {
        return decode_ppm(&bytes).map_err(|m| Error::format(path, m));
    }
    let img = image::load_from_memory(&bytes).map_err(|e| Error::format(path, e.to_string()))?.to_rgba8();
    let (w, h) = img.dimensions();
    Image::new(w as usize, h as usize, img.into_raw()).in_file(path)
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err("truncated PPM header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| "bad PPM header")?.to_string());
    }
    if fields[0] != "P6" || fields[3] != "255" {
        return Err("only P6 with maxval 255 is supported".into());
    }
    let w: usize = fields[1].parse().map_err(|_| "bad PPM width")?;
    let h: usize = fields[2].parse().map_err(|_| "bad PPM height")?;
    let data = bytes.get(i + 1..).ok_or("missing PPM raster")?;
    if data.len() != 3 * w * h {
        return Err(format!("PPM raster has {} bytes, expected {}", data.len(), 3 * w * h));
    }
    let px = data.chunks_exact(3).flat_map(|c| [c[0], c[1], c[2], 255]).collect();
    Image::new(w, h, px).map_err(|e| e.to_string())
}
