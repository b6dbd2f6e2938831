//! Figure documents: `{"data": [traces...], "layout": {...}}` with `mesh3d`
//! and `scatter3d` line traces, in a canonical JSON encoding.
//!
//! Canonical form: object keys sorted bytewise, no whitespace, floats written
//! as the shortest decimal that round-trips (integral values without a
//! fraction), line breaks as `null`. Keys this module does not model are kept
//! in `extras` maps so foreign figures survive a decode/encode cycle.

use serde_json::{Map, Number, Value};
use thiserror::Error;

use crate::geometry::{LineKind, Polyline3, TriMesh};

pub const TERRAIN: &str = "Terrain";
pub const BUILDINGS: &str = "Buildings";
pub const ROADS: &str = "Roads";
pub const POWER_LINES: &str = "Power lines";

pub const ROAD_COLOR: &str = "#1f77b4";
pub const POWER_COLOR: &str = "#d62728";
pub const BUILDING_COLOR: &str = "#c8c8c8";
pub const TERRAIN_COLORSCALE: &str = "Viridis";

const ROAD_WIDTH: f64 = 2.0;
const POWER_WIDTH: f64 = 3.0;

/// Renderer pinned into exported HTML pages.
pub const PLOTLY_CDN: &str = "https://cdn.plot.ly/plotly-2.29.1.min.js";

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("malformed JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("non-finite number in trace {trace:?} field {field}")]
    NonFinite { trace: String, field: &'static str },
    #[error("invalid trace {trace:?}: {reason}")]
    InvalidTrace { trace: String, reason: String },
}

fn schema(msg: impl Into<String>) -> SceneError {
    SceneError::Schema(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshColor {
    Solid(String),
    Intensity { values: Vec<f64>, colorscale: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh3dTrace {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub i: Vec<u32>,
    pub j: Vec<u32>,
    pub k: Vec<u32>,
    pub color: Option<MeshColor>,
    pub extras: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineStyle {
    pub color: Option<String>,
    pub width: Option<f64>,
    pub extras: Map<String, Value>,
}

/// `scatter3d` trace in `lines` mode; `None` entries break the line.
#[derive(Debug, Clone, PartialEq)]
pub struct Lines3dTrace {
    pub name: String,
    pub x: Vec<Option<f64>>,
    pub y: Vec<Option<f64>>,
    pub z: Vec<Option<f64>>,
    pub line: LineStyle,
    pub extras: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trace {
    Mesh3d(Mesh3dTrace),
    Lines3d(Lines3dTrace),
    /// Any trace type this module does not model, kept verbatim.
    Other(Map<String, Value>),
}

impl Trace {
    pub fn name(&self) -> Option<&str> {
        match self {
            Trace::Mesh3d(t) => Some(&t.name),
            Trace::Lines3d(t) => Some(&t.name),
            Trace::Other(m) => m.get("name").and_then(Value::as_str),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub title: Option<String>,
    pub aspectmode: Option<String>,
    pub scene_extras: Map<String, Value>,
    pub extras: Map<String, Value>,
}

impl Layout {
    pub fn titled(title: impl Into<String>) -> Self {
        Self {
            title: Some(title.into()),
            aspectmode: Some("data".into()),
            scene_extras: Map::new(),
            extras: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub data: Vec<Trace>,
    pub layout: Layout,
    pub extras: Map<String, Value>,
}

impl Figure {
    /// Assembles the four scene layers in their fixed order.
    pub fn from_layers(title: impl Into<String>, terrain: Trace, buildings: Trace, roads: Trace, power: Trace) -> Self {
        Self {
            data: vec![terrain, buildings, roads, power],
            layout: Layout::titled(title),
            extras: Map::new(),
        }
    }
}

fn check_mesh(mesh: &TriMesh, name: &str) -> Result<(), SceneError> {
    mesh.validate().map_err(|e| SceneError::InvalidTrace {
        trace: name.to_string(),
        reason: e.to_string(),
    })
}

fn mesh_arrays(mesh: &TriMesh, name: &str, color: MeshColor) -> Mesh3dTrace {
    let coord = |c: usize| mesh.vertices.iter().map(|v| v[c]).collect::<Vec<_>>();
    let corner = |c: usize| mesh.triangles.iter().map(|t| t[c]).collect::<Vec<_>>();
    Mesh3dTrace {
        name: name.to_string(),
        x: coord(0),
        y: coord(1),
        z: coord(2),
        i: corner(0),
        j: corner(1),
        k: corner(2),
        color: Some(color),
        extras: Map::new(),
    }
}

/// Terrain mesh colored by elevation.
pub fn terrain_trace(mesh: &TriMesh) -> Result<Trace, SceneError> {
    terrain_trace_with(mesh, TERRAIN_COLORSCALE)
}

pub fn terrain_trace_with(mesh: &TriMesh, colorscale: &str) -> Result<Trace, SceneError> {
    if mesh.is_empty() {
        return Err(SceneError::InvalidTrace {
            trace: TERRAIN.into(),
            reason: "empty mesh".into(),
        });
    }
    check_mesh(mesh, TERRAIN)?;
    let intensity = mesh.vertices.iter().map(|v| v[2]).collect();
    Ok(Trace::Mesh3d(mesh_arrays(
        mesh,
        TERRAIN,
        MeshColor::Intensity {
            values: intensity,
            colorscale: colorscale.to_string(),
        },
    )))
}

/// Single-colored mesh; an empty mesh gives a trace with empty arrays.
pub fn solid_mesh_trace(mesh: &TriMesh, name: &str, color: &str) -> Result<Trace, SceneError> {
    check_mesh(mesh, name)?;
    Ok(Trace::Mesh3d(mesh_arrays(mesh, name, MeshColor::Solid(color.to_string()))))
}

pub fn buildings_trace(mesh: &TriMesh) -> Result<Trace, SceneError> {
    solid_mesh_trace(mesh, BUILDINGS, BUILDING_COLOR)
}

/// Concatenates polylines into one line trace, separated by break markers.
pub fn lines_trace(lines: &[Polyline3], kind: LineKind) -> Trace {
    let (name, color, width) = match kind {
        LineKind::Road => (ROADS, ROAD_COLOR, ROAD_WIDTH),
        LineKind::Power => (POWER_LINES, POWER_COLOR, POWER_WIDTH),
    };
    let total = lines.iter().map(|l| l.points.len()).sum::<usize>() + lines.len().saturating_sub(1);
    let mut x = Vec::with_capacity(total);
    let mut y = Vec::with_capacity(total);
    let mut z = Vec::with_capacity(total);
    for (n, line) in lines.iter().enumerate() {
        if n > 0 {
            x.push(None);
            y.push(None);
            z.push(None);
        }
        for p in &line.points {
            x.push(Some(p[0]));
            y.push(Some(p[1]));
            z.push(Some(p[2]));
        }
    }
    Trace::Lines3d(Lines3dTrace {
        name: name.to_string(),
        x,
        y,
        z,
        line: LineStyle {
            color: Some(color.to_string()),
            width: Some(width),
            extras: Map::new(),
        },
        extras: Map::new(),
    })
}

// ---- encoding -------------------------------------------------------------

fn finite(v: f64, trace: &str, field: &'static str) -> Result<Value, SceneError> {
    Number::from_f64(v).map(Value::Number).ok_or_else(|| SceneError::NonFinite {
        trace: trace.to_string(),
        field,
    })
}

fn float_array(values: &[f64], trace: &str, field: &'static str) -> Result<Value, SceneError> {
    values
        .iter()
        .map(|&v| finite(v, trace, field))
        .collect::<Result<Vec<_>, _>>()
        .map(Value::Array)
}

fn gap_array(values: &[Option<f64>], trace: &str, field: &'static str) -> Result<Value, SceneError> {
    values
        .iter()
        .map(|v| match v {
            Some(v) => finite(*v, trace, field),
            None => Ok(Value::Null),
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Value::Array)
}

fn index_array(values: &[u32]) -> Value {
    Value::Array(values.iter().map(|&v| Value::from(v)).collect())
}

fn mesh_to_value(t: &Mesh3dTrace) -> Result<Value, SceneError> {
    let n = t.x.len();
    if t.y.len() != n || t.z.len() != n {
        return Err(SceneError::InvalidTrace {
            trace: t.name.clone(),
            reason: "x, y, z lengths differ".into(),
        });
    }
    if t.j.len() != t.i.len() || t.k.len() != t.i.len() {
        return Err(SceneError::InvalidTrace {
            trace: t.name.clone(),
            reason: "i, j, k lengths differ".into(),
        });
    }
    if t.i.iter().chain(&t.j).chain(&t.k).any(|&v| v as usize >= n) {
        return Err(SceneError::InvalidTrace {
            trace: t.name.clone(),
            reason: format!("index out of range for {n} vertices"),
        });
    }
    let mut m = t.extras.clone();
    m.insert("type".into(), "mesh3d".into());
    if !t.name.is_empty() {
        m.insert("name".into(), t.name.clone().into());
    }
    m.insert("x".into(), float_array(&t.x, &t.name, "x")?);
    m.insert("y".into(), float_array(&t.y, &t.name, "y")?);
    m.insert("z".into(), float_array(&t.z, &t.name, "z")?);
    m.insert("i".into(), index_array(&t.i));
    m.insert("j".into(), index_array(&t.j));
    m.insert("k".into(), index_array(&t.k));
    match &t.color {
        None => {}
        Some(MeshColor::Solid(c)) => {
            m.insert("color".into(), c.clone().into());
        }
        Some(MeshColor::Intensity { values, colorscale }) => {
            m.insert("intensity".into(), float_array(values, &t.name, "intensity")?);
            m.insert("colorscale".into(), colorscale.clone().into());
        }
    }
    Ok(Value::Object(m))
}

fn lines_to_value(t: &Lines3dTrace) -> Result<Value, SceneError> {
    let breaks = |v: &[Option<f64>]| v.iter().map(Option::is_none).collect::<Vec<_>>();
    if t.x.len() != t.y.len() || t.x.len() != t.z.len() || breaks(&t.x) != breaks(&t.y) || breaks(&t.x) != breaks(&t.z) {
        return Err(SceneError::InvalidTrace {
            trace: t.name.clone(),
            reason: "x, y, z lengths or break positions differ".into(),
        });
    }
    let mut line = t.line.extras.clone();
    if let Some(c) = &t.line.color {
        line.insert("color".into(), c.clone().into());
    }
    if let Some(w) = t.line.width {
        line.insert("width".into(), finite(w, &t.name, "line.width")?);
    }
    let mut m = t.extras.clone();
    m.insert("type".into(), "scatter3d".into());
    m.insert("mode".into(), "lines".into());
    if !t.name.is_empty() {
        m.insert("name".into(), t.name.clone().into());
    }
    m.insert("x".into(), gap_array(&t.x, &t.name, "x")?);
    m.insert("y".into(), gap_array(&t.y, &t.name, "y")?);
    m.insert("z".into(), gap_array(&t.z, &t.name, "z")?);
    m.insert("line".into(), Value::Object(line));
    Ok(Value::Object(m))
}

/// Builds the JSON value tree of a figure, validating every trace.
pub fn to_value(fig: &Figure) -> Result<Value, SceneError> {
    let data = fig
        .data
        .iter()
        .map(|t| match t {
            Trace::Mesh3d(t) => mesh_to_value(t),
            Trace::Lines3d(t) => lines_to_value(t),
            Trace::Other(m) => Ok(Value::Object(m.clone())),
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut scene = fig.layout.scene_extras.clone();
    if let Some(a) = &fig.layout.aspectmode {
        scene.insert("aspectmode".into(), a.clone().into());
    }
    let mut layout = fig.layout.extras.clone();
    if let Some(title) = &fig.layout.title {
        layout.insert("title".into(), title.clone().into());
    }
    if !scene.is_empty() {
        layout.insert("scene".into(), Value::Object(scene));
    }

    let mut root = fig.extras.clone();
    root.insert("data".into(), Value::Array(data));
    root.insert("layout".into(), Value::Object(layout));
    Ok(Value::Object(root))
}

/// Canonical UTF-8 JSON encoding of a figure.
pub fn serialize(fig: &Figure) -> Result<Vec<u8>, SceneError> {
    let value = to_value(fig)?;
    let mut out = String::with_capacity(1 << 16);
    write_canonical(&value, &mut out);
    Ok(out.into_bytes())
}

/// Writes any JSON value in canonical form.
pub fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => write_number(n, out),
        Value::String(s) => write_string(s, out),
        Value::Array(a) => {
            out.push('[');
            for (i, item) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_string(k, out);
                out.push(':');
                write_canonical(&m[k], out);
            }
            out.push('}');
        }
    }
}

fn write_string(s: &str, out: &mut String) {
    out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"));
}

fn write_number(n: &Number, out: &mut String) {
    if let Some(u) = n.as_u64() {
        out.push_str(&u.to_string());
    } else if let Some(i) = n.as_i64() {
        out.push_str(&i.to_string());
    } else if let Some(f) = n.as_f64() {
        out.push_str(&format_float(f));
    } else {
        out.push_str(&n.to_string());
    }
}

/// Shortest round-tripping decimal for a finite float; integral values that
/// are exactly representable as integers print without a fraction.
pub fn format_float(f: f64) -> String {
    const EXACT_INT: f64 = 9_007_199_254_740_992.0; // 2^53
    if f == 0.0 {
        return "0".into();
    }
    if f.fract() == 0.0 && f.abs() <= EXACT_INT {
        return format!("{}", f as i64);
    }
    let mut buf = ryu::Buffer::new();
    let s = buf.format_finite(f);
    s.strip_suffix(".0").unwrap_or(s).to_string()
}

// ---- decoding -------------------------------------------------------------

fn take_string(m: &mut Map<String, Value>, key: &str) -> Option<String> {
    match m.get(key) {
        Some(Value::String(_)) => m.remove(key).and_then(|v| v.as_str().map(str::to_string)),
        _ => None,
    }
}

fn float_vec(v: &Value, trace: &str, field: &str) -> Result<Vec<f64>, SceneError> {
    v.as_array()
        .ok_or_else(|| schema(format!("{trace}: {field} is not an array")))?
        .iter()
        .map(|e| e.as_f64().ok_or_else(|| schema(format!("{trace}: {field} holds a non-number"))))
        .collect()
}

fn gap_vec(v: &Value, trace: &str, field: &str) -> Result<Vec<Option<f64>>, SceneError> {
    v.as_array()
        .ok_or_else(|| schema(format!("{trace}: {field} is not an array")))?
        .iter()
        .map(|e| match e {
            Value::Null => Ok(None),
            e => e
                .as_f64()
                .map(Some)
                .ok_or_else(|| schema(format!("{trace}: {field} holds a non-number"))),
        })
        .collect()
}

fn index_vec(v: &Value, trace: &str, field: &str) -> Result<Vec<u32>, SceneError> {
    v.as_array()
        .ok_or_else(|| schema(format!("{trace}: {field} is not an array")))?
        .iter()
        .map(|e| {
            e.as_u64()
                .and_then(|u| u32::try_from(u).ok())
                .ok_or_else(|| schema(format!("{trace}: {field} holds a non-index")))
        })
        .collect()
}

fn mesh_from_map(mut m: Map<String, Value>) -> Result<Trace, SceneError> {
    let name = take_string(&mut m, "name").unwrap_or_default();
    let mut field = |key: &str| m.remove(key).ok_or_else(|| schema(format!("mesh3d {name:?}: missing {key}")));
    let (x, y, z) = (field("x")?, field("y")?, field("z")?);
    let (i, j, k) = (field("i")?, field("j")?, field("k")?);
    let color = match (m.get("intensity"), m.get("colorscale"), m.get("color")) {
        (Some(Value::Array(_)), Some(Value::String(_)), _) => {
            let values = float_vec(&m.remove("intensity").unwrap(), &name, "intensity")?;
            let colorscale = take_string(&mut m, "colorscale").unwrap();
            Some(MeshColor::Intensity { values, colorscale })
        }
        (_, _, Some(Value::String(_))) => take_string(&mut m, "color").map(MeshColor::Solid),
        _ => None,
    };
    let t = Mesh3dTrace {
        x: float_vec(&x, &name, "x")?,
        y: float_vec(&y, &name, "y")?,
        z: float_vec(&z, &name, "z")?,
        i: index_vec(&i, &name, "i")?,
        j: index_vec(&j, &name, "j")?,
        k: index_vec(&k, &name, "k")?,
        name,
        color,
        extras: m,
    };
    let n = t.x.len();
    if t.y.len() != n || t.z.len() != n || t.j.len() != t.i.len() || t.k.len() != t.i.len() {
        return Err(schema(format!("mesh3d {:?}: array lengths differ", t.name)));
    }
    if t.i.iter().chain(&t.j).chain(&t.k).any(|&v| v as usize >= n) {
        return Err(schema(format!("mesh3d {:?}: index out of range", t.name)));
    }
    Ok(Trace::Mesh3d(t))
}

fn lines_from_map(mut m: Map<String, Value>) -> Result<Trace, SceneError> {
    m.remove("mode");
    let name = take_string(&mut m, "name").unwrap_or_default();
    let mut field = |key: &str| m.remove(key).ok_or_else(|| schema(format!("scatter3d {name:?}: missing {key}")));
    let (x, y, z) = (field("x")?, field("y")?, field("z")?);
    let line = match m.remove("line") {
        None => LineStyle {
            color: None,
            width: None,
            extras: Map::new(),
        },
        Some(Value::Object(mut l)) => {
            let color = take_string(&mut l, "color");
            let width = match l.get("width").and_then(Value::as_f64) {
                Some(w) => {
                    l.remove("width");
                    Some(w)
                }
                None => None,
            };
            LineStyle { color, width, extras: l }
        }
        Some(_) => return Err(schema(format!("scatter3d {name:?}: line is not an object"))),
    };
    let t = Lines3dTrace {
        x: gap_vec(&x, &name, "x")?,
        y: gap_vec(&y, &name, "y")?,
        z: gap_vec(&z, &name, "z")?,
        name,
        line,
        extras: m,
    };
    let breaks = |v: &[Option<f64>]| v.iter().map(Option::is_none).collect::<Vec<_>>();
    if t.x.len() != t.y.len() || t.x.len() != t.z.len() || breaks(&t.x) != breaks(&t.y) || breaks(&t.x) != breaks(&t.z) {
        return Err(schema(format!("scatter3d {:?}: misaligned coordinates", t.name)));
    }
    Ok(Trace::Lines3d(t))
}

fn trace_from_value(v: Value) -> Result<Trace, SceneError> {
    let Value::Object(mut m) = v else {
        return Err(schema("trace is not an object"));
    };
    match (m.get("type").and_then(Value::as_str), m.get("mode").and_then(Value::as_str)) {
        (Some("mesh3d"), _) => {
            m.remove("type");
            mesh_from_map(m)
        }
        (Some("scatter3d"), Some("lines")) => {
            m.remove("type");
            lines_from_map(m)
        }
        _ => Ok(Trace::Other(m)),
    }
}

pub fn from_value(v: Value) -> Result<Figure, SceneError> {
    let Value::Object(mut root) = v else {
        return Err(schema("figure is not an object"));
    };
    let data = match root.remove("data") {
        Some(Value::Array(a)) => a.into_iter().map(trace_from_value).collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(schema("data is not an array")),
        None => return Err(schema("missing data")),
    };
    let layout = match root.remove("layout") {
        None => Layout {
            title: None,
            aspectmode: None,
            scene_extras: Map::new(),
            extras: Map::new(),
        },
        Some(Value::Object(mut l)) => {
            let title = take_string(&mut l, "title");
            let (aspectmode, scene_extras) = match l.remove("scene") {
                Some(Value::Object(mut s)) => (take_string(&mut s, "aspectmode"), s),
                Some(other) => {
                    // Unmodelled shape; keep it verbatim.
                    l.insert("scene".into(), other);
                    (None, Map::new())
                }
                None => (None, Map::new()),
            };
            Layout {
                title,
                aspectmode,
                scene_extras,
                extras: l,
            }
        }
        Some(_) => return Err(schema("layout is not an object")),
    };
    Ok(Figure {
        data,
        layout,
        extras: root,
    })
}

pub fn deserialize(bytes: &[u8]) -> Result<Figure, SceneError> {
    from_value(serde_json::from_slice(bytes)?)
}

/// A standalone HTML page that renders the figure with the pinned renderer.
pub fn to_html(fig: &Figure) -> Result<String, SceneError> {
    let json = String::from_utf8(serialize(fig)?).expect("canonical JSON is UTF-8");
    Ok(html_page(&json, fig.layout.title.as_deref().unwrap_or("3D model")))
}

/// Wraps already-serialized figure JSON in an HTML page.
pub fn html_page(figure_json: &str, title: &str) -> String {
    // "</" inside a <script> would end it early; "<\/" is the same JSON string.
    let embedded = figure_json.replace("</", "<\\/");
    let title = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    format!(
        r#"<!doctype html>
<html>
<head>
  <meta charset="utf-8">
  <title>{title}</title>
  <script src="{PLOTLY_CDN}"></script>
  <style>body{{margin:0;font-family:Arial,Helvetica,sans-serif}} #plot{{width:100vw;height:100vh;}}</style>
</head>
<body>
  <div id="plot"></div>
  <script id="figure" type="application/json">{embedded}</script>
  <script>
    var fig = JSON.parse(document.getElementById("figure").textContent);
    Plotly.newPlot("plot", fig.data, fig.layout || {{}}, {{responsive: true}});
  </script>
</body>
</html>
"#
    )
}

/// Extracts the embedded figure JSON from a page written by [`html_page`].
pub fn figure_json_from_html(html: &str) -> Option<String> {
    let open = r#"<script id="figure" type="application/json">"#;
    let start = html.find(open)? + open.len();
    let end = start + html[start..].find("</script>")?;
    Some(html[start..end].replace("<\\/", "</"))
}
