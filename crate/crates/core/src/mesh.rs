//! Rectangular multi-element meshes with many-to-many face adjacency.
//!
//! Elements are axis-aligned rectangles of a parent domain, optionally
//! composed with the global sine perturbation. Adjacency is derived purely
//! from geometry: two faces on the same line with opposite outward normals
//! are coupled over the intersection of their spans.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use crate::curvilinear::{AffineChart, CurvilinearMap, SinePerturbed};
use crate::error::{Error, Result};
use crate::quadrature::{NodeFamily, MAX_POLY_DEGREE};
use crate::tensor::FaceTag;

const GEOM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FaceId {
    pub element: usize,
    pub tag: FaceTag,
}

impl FaceId {
    pub fn new(element: usize, tag: FaceTag) -> Self {
        FaceId { element, tag }
    }
}

impl fmt::Display for FaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.element, self.tag)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum MapKind {
    #[default]
    Affine,
    Sine,
}

impl MapKind {
    pub fn token(self) -> &'static str {
        match self {
            MapKind::Affine => "affine",
            MapKind::Sine => "sine",
        }
    }
}

impl std::str::FromStr for MapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "affine" | "cartesian" => Ok(MapKind::Affine),
            "sine" | "curvilinear" => Ok(MapKind::Sine),
            other => Err(Error::InvalidArgument(format!("unknown map kind '{other}'"))),
        }
    }
}

/// Map from the reference square onto one element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementMap {
    Affine(AffineChart),
    Sine(SinePerturbed),
}

impl CurvilinearMap for ElementMap {
    fn eval(&self, xi: f64, eta: f64) -> (f64, f64) {
        match self {
            ElementMap::Affine(m) => m.eval(xi, eta),
            ElementMap::Sine(m) => m.eval(xi, eta),
        }
    }

    fn jacobian(&self, xi: f64, eta: f64) -> [[f64; 2]; 2] {
        match self {
            ElementMap::Affine(m) => m.jacobian(xi, eta),
            ElementMap::Sine(m) => m.jacobian(xi, eta),
        }
    }
}

/// Discretization choice for an element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ElementSpec {
    pub family: NodeFamily,
    pub degree_xi: usize,
    pub degree_eta: usize,
    pub map: MapKind,
}

impl ElementSpec {
    pub fn uniform(family: NodeFamily, degree: usize, map: MapKind) -> Self {
        ElementSpec {
            family,
            degree_xi: degree,
            degree_eta: degree,
            map,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Element {
    pub rect: AffineChart,
    pub spec: ElementSpec,
}

impl Element {
    pub fn new(rect: AffineChart, spec: ElementSpec) -> Self {
        Element { rect, spec }
    }

    pub fn map(&self) -> ElementMap {
        match self.spec.map {
            MapKind::Affine => ElementMap::Affine(self.rect),
            MapKind::Sine => ElementMap::Sine(SinePerturbed::new(self.rect)),
        }
    }

    /// Parent-domain length of a face.
    pub fn face_length(&self, tag: FaceTag) -> f64 {
        let (a, b) = self.face_span(tag);
        b - a
    }

    /// Parent-domain tangential interval covered by a face.
    pub fn face_span(&self, tag: FaceTag) -> (f64, f64) {
        let r = &self.rect;
        if tag.runs_along_eta() {
            (r.y0, r.y1)
        } else {
            (r.x0, r.x1)
        }
    }

    /// Coordinate of the line carrying a face.
    pub fn face_line(&self, tag: FaceTag) -> f64 {
        let r = &self.rect;
        match tag {
            FaceTag::East => r.x1,
            FaceTag::West => r.x0,
            FaceTag::North => r.y1,
            FaceTag::South => r.y0,
        }
    }

    pub fn area(&self) -> f64 {
        self.rect.width() * self.rect.height()
    }

    /// Parent tangential coordinate of the local face parameter `s`.
    pub fn face_point(&self, tag: FaceTag, s: f64) -> f64 {
        let (a, b) = self.face_span(tag);
        a + s * (b - a)
    }
}

/// One ordered pair of overlapping faces; ranges are in each face's local
/// parameter `s ∈ [0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterfacePair {
    pub a: FaceId,
    pub a_range: (f64, f64),
    pub b: FaceId,
    pub b_range: (f64, f64),
}

impl InterfacePair {
    pub fn reversed(&self) -> InterfacePair {
        InterfacePair {
            a: self.b,
            a_range: self.b_range,
            b: self.a,
            b_range: self.a_range,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeshTopology {
    elements: Vec<Element>,
    interfaces: Vec<InterfacePair>,
    exterior: Vec<FaceId>,
}

fn line_key(v: f64) -> i64 {
    (v * 1e9).round() as i64
}

impl MeshTopology {
    /// Derive adjacency from the element rectangles and validate it.
    pub fn from_elements(elements: Vec<Element>) -> Result<MeshTopology> {
        for (i, e) in elements.iter().enumerate() {
            let r = &e.rect;
            if !(r.x1 > r.x0 && r.y1 > r.y0) || ![r.x0, r.x1, r.y0, r.y1].iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument(format!("element {i} has a degenerate rectangle")));
            }
            let s = &e.spec;
            for d in [s.degree_xi, s.degree_eta] {
                let min = if s.family == NodeFamily::Lobatto { 1 } else { 0 };
                if d < min || d > MAX_POLY_DEGREE {
                    return Err(Error::InvalidArgument(format!(
                        "element {i}: degree {d} outside {min}..={MAX_POLY_DEGREE} for {}",
                        s.family
                    )));
                }
            }
        }

        // (vertical?, line) -> faces on that line
        let mut buckets: BTreeMap<(bool, i64), Vec<FaceId>> = BTreeMap::new();
        for (i, e) in elements.iter().enumerate() {
            for tag in FaceTag::ALL {
                buckets
                    .entry((tag.runs_along_eta(), line_key(e.face_line(tag))))
                    .or_default()
                    .push(FaceId::new(i, tag));
            }
        }

        let mut interfaces = Vec::new();
        for faces in buckets.values() {
            // faces on one line: sweep the low-side and high-side spans in order
            let span = |f: &FaceId| elements[f.element].face_span(f.tag);
            let sorted = |low: bool| {
                let mut v: Vec<FaceId> = faces
                    .iter()
                    .copied()
                    .filter(|f| matches!(f.tag, FaceTag::East | FaceTag::North) == low)
                    .collect();
                v.sort_by(|p, q| span(p).0.total_cmp(&span(q).0));
                v
            };
            let (low, high) = (sorted(true), sorted(false));
            let (mut i, mut j) = (0, 0);
            while i < low.len() && j < high.len() {
                let (fa, fb) = (low[i], high[j]);
                let ((a0, a1), (b0, b1)) = (span(&fa), span(&fb));
                let (t0, t1) = (a0.max(b0), a1.min(b1));
                if fa.element != fb.element && t1 - t0 > GEOM_TOL * (a1 - a0).min(b1 - b0) {
                    let (la, lb) = (a1 - a0, b1 - b0);
                    let pair = InterfacePair {
                        a: fa,
                        a_range: ((t0 - a0) / la, (t1 - a0) / la),
                        b: fb,
                        b_range: ((t0 - b0) / lb, (t1 - b0) / lb),
                    };
                    interfaces.push(pair.reversed());
                    interfaces.push(pair);
                }
                if a1 <= b1 {
                    i += 1;
                } else {
                    j += 1;
                }
            }
        }
        interfaces.sort_by_key(|p| (p.a, p.b));

        let coupled: HashSet<FaceId> = interfaces.iter().map(|p| p.a).collect();
        let exterior = (0..elements.len())
            .flat_map(|i| FaceTag::ALL.into_iter().map(move |t| FaceId::new(i, t)))
            .filter(|f| !coupled.contains(f))
            .collect();

        let mesh = MeshTopology {
            elements,
            interfaces,
            exterior,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Assemble from explicit parts (used by the file loader); validated.
    pub fn from_parts(elements: Vec<Element>, interfaces: Vec<InterfacePair>, exterior: Vec<FaceId>) -> Result<MeshTopology> {
        let mesh = MeshTopology {
            elements,
            interfaces,
            exterior,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    /// All ordered interface pairs, both directions present.
    pub fn interfaces(&self) -> &[InterfacePair] {
        &self.interfaces
    }

    pub fn exterior(&self) -> &[FaceId] {
        &self.exterior
    }

    pub fn is_exterior(&self, face: FaceId) -> bool {
        self.exterior.binary_search(&face).is_ok()
    }

    /// Interior faces in (element, tag) order.
    pub fn interior_faces(&self) -> Vec<FaceId> {
        let mut v: Vec<FaceId> = self.interfaces.iter().map(|p| p.a).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Pairs whose first face is `face`, ordered by neighbour.
    pub fn neighbors(&self, face: FaceId) -> &[InterfacePair] {
        let lo = self.interfaces.partition_point(|p| p.a < face);
        let hi = self.interfaces.partition_point(|p| p.a <= face);
        &self.interfaces[lo..hi]
    }

    pub fn total_area(&self) -> f64 {
        self.elements.iter().map(Element::area).sum()
    }

    /// Replace each element's discretization spec; adjacency is unchanged.
    pub fn with_specs(mut self, f: impl Fn(usize, &Element) -> ElementSpec) -> Result<MeshTopology> {
        for i in 0..self.elements.len() {
            let spec = f(i, &self.elements[i]);
            self.elements[i].spec = spec;
        }
        MeshTopology::from_elements(self.elements)
    }

    /// Split every element into `n × n` equal children.
    pub fn refine(&self, n: usize) -> Result<MeshTopology> {
        if n == 0 {
            return Err(Error::InvalidArgument("refinement factor must be at least 1".into()));
        }
        let mut out = Vec::with_capacity(self.elements.len() * n * n);
        for e in &self.elements {
            let r = e.rect;
            let (w, h) = (r.width() / n as f64, r.height() / n as f64);
            for i in 0..n {
                for j in 0..n {
                    let x0 = r.x0 + i as f64 * w;
                    let y0 = r.y0 + j as f64 * h;
                    let x1 = if i + 1 == n { r.x1 } else { x0 + w };
                    let y1 = if j + 1 == n { r.y1 } else { y0 + h };
                    out.push(Element::new(AffineChart::new(x0, x1, y0, y1), e.spec));
                }
            }
        }
        MeshTopology::from_elements(out)
    }

    pub fn validate(&self) -> Result<()> {
        let ne = self.elements.len();
        let bad = |face: FaceId, message: String| Err(Error::MeshValidation { face, message });
        let mut by_face: HashMap<FaceId, Vec<&InterfacePair>> = HashMap::new();
        let keys: HashMap<(FaceId, FaceId), &InterfacePair> = self.interfaces.iter().map(|p| ((p.a, p.b), p)).collect();
        if keys.len() != self.interfaces.len() {
            return Err(Error::MeshValidation {
                face: self.interfaces[0].a,
                message: "duplicate interface pair".into(),
            });
        }
        for p in &self.interfaces {
            for f in [p.a, p.b] {
                if f.element >= ne {
                    return bad(f, format!("element index out of range ({ne} elements)"));
                }
            }
            if p.a.element == p.b.element {
                return bad(p.a, "face paired with its own element".into());
            }
            if p.b.tag != p.a.tag.opposite() {
                return bad(p.a, format!("paired with non-opposing face {}", p.b));
            }
            for (f, (s0, s1)) in [(p.a, p.a_range), (p.b, p.b_range)] {
                if !(s0 >= -GEOM_TOL && s1 <= 1.0 + GEOM_TOL && s1 > s0) {
                    return bad(f, format!("overlap interval [{s0}, {s1}] outside the face"));
                }
            }
            let (ea, eb) = (&self.elements[p.a.element], &self.elements[p.b.element]);
            let scale = ea.face_length(p.a.tag).max(eb.face_length(p.b.tag));
            if (ea.face_line(p.a.tag) - eb.face_line(p.b.tag)).abs() > GEOM_TOL * scale.max(1.0) {
                return bad(p.a, format!("not collinear with {}", p.b));
            }
            for (sa, sb) in [(p.a_range.0, p.b_range.0), (p.a_range.1, p.b_range.1)] {
                let ta = ea.face_point(p.a.tag, sa);
                let tb = eb.face_point(p.b.tag, sb);
                if (ta - tb).abs() > GEOM_TOL * scale.max(1.0) {
                    return bad(p.a, format!("overlap endpoints disagree with {} ({ta} vs {tb})", p.b));
                }
            }
            let rev = p.reversed();
            match keys.get(&(rev.a, rev.b)) {
                Some(q) if approx_range(q.a_range, rev.a_range) && approx_range(q.b_range, rev.b_range) => {}
                Some(_) => return bad(p.a, format!("reverse pair with {} has different ranges", p.b)),
                None => return bad(p.a, format!("missing reverse pair from {}", p.b)),
            }
            by_face.entry(p.a).or_default().push(p);
        }

        let ext: HashSet<FaceId> = self.exterior.iter().copied().collect();
        if ext.len() != self.exterior.len() {
            return Err(Error::InvalidArgument("duplicate exterior face".into()));
        }
        if self.exterior.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("exterior faces must be sorted".into()));
        }
        for i in 0..ne {
            for tag in FaceTag::ALL {
                let f = FaceId::new(i, tag);
                match (ext.contains(&f), by_face.get_mut(&f)) {
                    (true, Some(_)) => return bad(f, "listed as exterior but has neighbours".into()),
                    (false, None) => return bad(f, "neither exterior nor covered by neighbours".into()),
                    (true, None) => {}
                    (false, Some(pairs)) => {
                        pairs.sort_by(|p, q| p.a_range.0.total_cmp(&q.a_range.0));
                        let mut cursor = 0.0;
                        for p in pairs.iter() {
                            let (s0, s1) = p.a_range;
                            if s0 > cursor + GEOM_TOL {
                                return bad(f, format!("gap in coverage over [{cursor}, {s0}]"));
                            }
                            if s0 < cursor - GEOM_TOL {
                                return bad(f, format!("overlapping neighbour intervals at {s0}"));
                            }
                            cursor = s1;
                        }
                        if (cursor - 1.0).abs() > GEOM_TOL {
                            return bad(f, format!("coverage ends at {cursor}, not 1"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<MeshTopology> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        MeshTopology::parse(&text)
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "gsbp-mesh 1");
        let _ = writeln!(s, "elements {}", self.elements.len());
        for (i, e) in self.elements.iter().enumerate() {
            let r = &e.rect;
            let _ = writeln!(
                s,
                "{i} {:.16e} {:.16e} {:.16e} {:.16e} {} {} {} {}",
                r.x0,
                r.x1,
                r.y0,
                r.y1,
                e.spec.degree_xi,
                e.spec.degree_eta,
                e.spec.family.token(),
                e.spec.map.token()
            );
        }
        let _ = writeln!(s, "interfaces {}", self.interfaces.len());
        for p in &self.interfaces {
            let _ = writeln!(
                s,
                "{} {} {:.16e} {:.16e} {} {} {:.16e} {:.16e}",
                p.a.element, p.a.tag, p.a_range.0, p.a_range.1, p.b.element, p.b.tag, p.b_range.0, p.b_range.1
            );
        }
        let _ = writeln!(s, "exterior {}", self.exterior.len());
        for f in &self.exterior {
            let _ = writeln!(s, "{} {}", f.element, f.tag);
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str) -> Result<MeshTopology> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::MeshParse {
                line: 0,
                message: format!("unexpected end of file, expected {what}"),
            })
        };

        let (ln, header) = next("header")?;
        if header != "gsbp-mesh 1" {
            return Err(perr(ln, format!("expected header 'gsbp-mesh 1', found '{header}'")));
        }

        let n_el = section(next("elements section")?, "elements")?;
        let mut elements = Vec::with_capacity(n_el);
        for i in 0..n_el {
            let (ln, l) = next("element record")?;
            let f = fields(ln, l, 9)?;
            let id: usize = field(ln, f[0], "id")?;
            if id != i {
                return Err(perr(ln, format!("element id {id} out of sequence (expected {i})")));
            }
            let rect = AffineChart::new(
                field(ln, f[1], "x0")?,
                field(ln, f[2], "x1")?,
                field(ln, f[3], "y0")?,
                field(ln, f[4], "y1")?,
            );
            let spec = ElementSpec {
                degree_xi: field(ln, f[5], "n_xi")?,
                degree_eta: field(ln, f[6], "n_eta")?,
                family: f[7].parse().map_err(|_| perr(ln, format!("field 'family': unknown node family '{}'", f[7])))?,
                map: f[8].parse().map_err(|_| perr(ln, format!("field 'map': unknown map kind '{}'", f[8])))?,
            };
            elements.push(Element::new(rect, spec));
        }

        let n_if = section(next("interfaces section")?, "interfaces")?;
        let mut interfaces = Vec::with_capacity(n_if);
        for _ in 0..n_if {
            let (ln, l) = next("interface record")?;
            let f = fields(ln, l, 8)?;
            interfaces.push(InterfacePair {
                a: face(ln, f[0], f[1])?,
                a_range: (field(ln, f[2], "s0")?, field(ln, f[3], "s1")?),
                b: face(ln, f[4], f[5])?,
                b_range: (field(ln, f[6], "s0")?, field(ln, f[7], "s1")?),
            });
        }

        let n_ex = section(next("exterior section")?, "exterior")?;
        let mut exterior = Vec::with_capacity(n_ex);
        for _ in 0..n_ex {
            let (ln, l) = next("exterior record")?;
            let f = fields(ln, l, 2)?;
            exterior.push(face(ln, f[0], f[1])?);
        }
        let (ln, l) = next("'end'")?;
        if l != "end" {
            return Err(perr(ln, format!("expected 'end', found '{l}'")));
        }
        if let Ok((ln, l)) = next("") {
            return Err(perr(ln, format!("trailing content '{l}'")));
        }
        if interfaces.is_empty() && exterior.is_empty() && elements.is_empty() {
            return Err(perr(0, "empty mesh".into()));
        }
        MeshTopology::from_parts(elements, interfaces, exterior)
    }
}

fn approx_range(a: (f64, f64), b: (f64, f64)) -> bool {
    (a.0 - b.0).abs() <= GEOM_TOL && (a.1 - b.1).abs() <= GEOM_TOL
}

fn perr(line: usize, message: String) -> Error {
    Error::MeshParse { line, message }
}

fn section((ln, l): (usize, &str), name: &str) -> Result<usize> {
    let f: Vec<&str> = l.split_whitespace().collect();
    if f.len() != 2 || f[0] != name {
        return Err(perr(ln, format!("expected '{name} <count>', found '{l}'")));
    }
    field(ln, f[1], "count")
}

fn fields(ln: usize, l: &str, n: usize) -> Result<Vec<&str>> {
    let f: Vec<&str> = l.split_whitespace().collect();
    if f.len() != n {
        return Err(perr(ln, format!("expected {n} fields, found {}", f.len())));
    }
    Ok(f)
}

fn field<T: std::str::FromStr>(ln: usize, s: &str, name: &str) -> Result<T> {
    s.parse().map_err(|_| perr(ln, format!("field '{name}': cannot parse '{s}'")))
}

fn face(ln: usize, el: &str, tag: &str) -> Result<FaceId> {
    Ok(FaceId::new(
        field(ln, el, "element")?,
        tag.parse().map_err(|_| perr(ln, format!("field 'face': unknown face tag '{tag}'")))?,
    ))
}

/// Number of elements in the basket-weave mesh at `level`.
pub fn basket_weave_count(level: usize) -> usize {
    128 * level * level
}

/// Refinement level `n` of the basket-weave mesh: every element of
/// [`basket_weave_base`] split into `2n × 2n` children.
pub fn basket_weave_mesh(level: usize, spec: ElementSpec) -> Result<MeshTopology> {
    if level == 0 {
        return Err(Error::InvalidArgument("refinement level must be at least 1".into()));
    }
    basket_weave_base(spec)?.refine(2 * level)
}

/// `[-1, 1]²` as a 4×4 coarse grid whose cells are halved along alternating
/// axes, so every coarse-cell boundary is a 2:1 interface. 32 elements.
pub fn basket_weave_base(spec: ElementSpec) -> Result<MeshTopology> {
    let h = 0.5;
    let mut elements = Vec::with_capacity(32);
    for i in 0..4 {
        for j in 0..4 {
            let x0 = -1.0 + i as f64 * h;
            let y0 = -1.0 + j as f64 * h;
            let (x1, y1) = (x0 + h, y0 + h);
            let (xm, ym) = (x0 + 0.5 * h, y0 + 0.5 * h);
            if (i + j) % 2 == 0 {
                elements.push(Element::new(AffineChart::new(x0, xm, y0, y1), spec));
                elements.push(Element::new(AffineChart::new(xm, x1, y0, y1), spec));
            } else {
                elements.push(Element::new(AffineChart::new(x0, x1, y0, ym), spec));
                elements.push(Element::new(AffineChart::new(x0, x1, ym, y1), spec));
            }
        }
    }
    MeshTopology::from_elements(elements)
}

pub fn single_element(rect: AffineChart, spec: ElementSpec) -> Result<MeshTopology> {
    MeshTopology::from_elements(vec![Element::new(rect, spec)])
}

/// `[0, 1] × [0, 1]` and `[1, 2] × [0, 1]` sharing a full face.
pub fn conforming_pair(left: ElementSpec, right: ElementSpec) -> Result<MeshTopology> {
    MeshTopology::from_elements(vec![
        Element::new(AffineChart::new(0.0, 1.0, 0.0, 1.0), left),
        Element::new(AffineChart::new(1.0, 2.0, 0.0, 1.0), right),
    ])
}

/// `[0, 1] × [0, 1]` against `ratio` stacked elements on `[1, 2] × [0, 1]`.
pub fn nonconforming_stack(left: ElementSpec, right: ElementSpec, ratio: usize) -> Result<MeshTopology> {
    if ratio == 0 {
        return Err(Error::InvalidArgument("ratio must be at least 1".into()));
    }
    let mut v = vec![Element::new(AffineChart::new(0.0, 1.0, 0.0, 1.0), left)];
    let h = 1.0 / ratio as f64;
    for k in 0..ratio {
        let y1 = if k + 1 == ratio { 1.0 } else { (k + 1) as f64 * h };
        v.push(Element::new(AffineChart::new(1.0, 2.0, k as f64 * h, y1), right));
    }
    MeshTopology::from_elements(v)
}
