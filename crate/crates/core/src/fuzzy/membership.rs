use serde::{Deserialize, Serialize};

/// Piecewise-linear membership function.
///
/// Breakpoints are non-decreasing abscissae in the variable's units. A set
/// that is open towards a universe bound is a trapezoid whose two outer
/// breakpoints both sit on that bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MembershipRepr", into = "MembershipRepr")]
pub enum MembershipFunction {
    Triangle([f64; 3]),
    Trapezoid([f64; 4]),
}

impl MembershipFunction {
    pub fn triangle(a: f64, b: f64, c: f64) -> Result<Self, String> {
        check_points(&[a, b, c])?;
        Ok(Self::Triangle([a, b, c]))
    }

    pub fn trapezoid(a: f64, b: f64, c: f64, d: f64) -> Result<Self, String> {
        check_points(&[a, b, c, d])?;
        Ok(Self::Trapezoid([a, b, c, d]))
    }

    /// Breakpoints as a trapezoid `(a, b, c, d)`; a triangle has `b == c`.
    pub fn corners(&self) -> [f64; 4] {
        match *self {
            Self::Triangle([a, b, c]) => [a, b, b, c],
            Self::Trapezoid(p) => p,
        }
    }

    pub fn support(&self) -> (f64, f64) {
        let [a, _, _, d] = self.corners();
        (a, d)
    }

    pub fn plateau(&self) -> (f64, f64) {
        let [_, b, c, _] = self.corners();
        (b, c)
    }

    pub fn degree(&self, x: f64) -> f64 {
        membership(self, x)
    }

    /// Applies `x -> scale * x + offset` (scale > 0) to every breakpoint.
    pub fn remapped(&self, scale: f64, offset: f64) -> Self {
        let f = |v: f64| scale * v + offset;
        match *self {
            Self::Triangle([a, b, c]) => Self::Triangle([f(a), f(b), f(c)]),
            Self::Trapezoid([a, b, c, d]) => Self::Trapezoid([f(a), f(b), f(c), f(d)]),
        }
    }
}

/// Exact piecewise-linear degree of `x` in `mf`.
pub fn membership(mf: &MembershipFunction, x: f64) -> f64 {
    let [a, b, c, d] = mf.corners();
    if x < a || x > d || x.is_nan() {
        return 0.0;
    }
    if x >= b && x <= c {
        return 1.0;
    }
    let y = if x < b {
        (x - a) / (b - a)
    } else {
        (d - x) / (d - c)
    };
    y.clamp(0.0, 1.0)
}

fn check_points(points: &[f64]) -> Result<(), String> {
    if points.iter().any(|p| !p.is_finite()) {
        return Err(format!("breakpoints must be finite: {points:?}"));
    }
    if points.windows(2).any(|w| w[0] > w[1]) {
        return Err(format!("breakpoints must be non-decreasing: {points:?}"));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Triangle,
    Trapezoid,
}

#[derive(Serialize, Deserialize)]
struct MembershipRepr {
    kind: Kind,
    points: Vec<f64>,
}

impl TryFrom<MembershipRepr> for MembershipFunction {
    type Error = String;

    fn try_from(r: MembershipRepr) -> Result<Self, Self::Error> {
        match (r.kind, r.points.as_slice()) {
            (Kind::Triangle, &[a, b, c]) => Self::triangle(a, b, c),
            (Kind::Trapezoid, &[a, b, c, d]) => Self::trapezoid(a, b, c, d),
            (Kind::Triangle, p) => Err(format!("triangle needs 3 breakpoints, got {}", p.len())),
            (Kind::Trapezoid, p) => Err(format!("trapezoid needs 4 breakpoints, got {}", p.len())),
        }
    }
}

impl From<MembershipFunction> for MembershipRepr {
    fn from(mf: MembershipFunction) -> Self {
        match mf {
            MembershipFunction::Triangle(p) => Self {
                kind: Kind::Triangle,
                points: p.to_vec(),
            },
            MembershipFunction::Trapezoid(p) => Self {
                kind: Kind::Trapezoid,
                points: p.to_vec(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trap() -> MembershipFunction {
        MembershipFunction::trapezoid(20.0, 30.0, 40.0, 50.0).unwrap()
    }

    #[test]
    fn trapezoid_edges_plateau_and_outside() {
        assert_eq!(membership(&trap(), 25.0), 0.5);
        assert_eq!(membership(&trap(), 35.0), 1.0);
        assert_eq!(membership(&trap(), 60.0), 0.0);
        assert_eq!(membership(&trap(), 45.0), 0.5);
        assert_eq!(membership(&trap(), 20.0), 0.0);
        assert_eq!(membership(&trap(), 30.0), 1.0);
    }

    #[test]
    fn triangle_apex_is_one() {
        let t = MembershipFunction::triangle(40.0, 50.0, 60.0).unwrap();
        assert_eq!(t.degree(50.0), 1.0);
        assert_eq!(t.degree(55.0), 0.5);
        assert_eq!(t.degree(39.0), 0.0);
    }

    #[test]
    fn open_ended_set_is_one_at_the_bound() {
        let low = MembershipFunction::trapezoid(0.0, 0.0, 10.0, 20.0).unwrap();
        assert_eq!(low.degree(0.0), 1.0);
        let high = MembershipFunction::trapezoid(80.0, 90.0, 100.0, 100.0).unwrap();
        assert_eq!(high.degree(100.0), 1.0);
    }

    #[test]
    fn rejects_bad_breakpoints() {
        assert!(MembershipFunction::trapezoid(1.0, 0.0, 2.0, 3.0).is_err());
        assert!(MembershipFunction::triangle(0.0, f64::NAN, 1.0).is_err());
        let bad: Result<MembershipFunction, _> =
            serde_json::from_str(r#"{"kind":"triangle","points":[1,2,3,4]}"#);
        assert!(bad.is_err());
    }

    proptest! {
        #[test]
        fn degree_stays_in_unit_interval(
            mut pts in proptest::array::uniform4(-1e3f64..1e3),
            x in -2e3f64..2e3,
        ) {
            pts.sort_by(f64::total_cmp);
            let mf = MembershipFunction::trapezoid(pts[0], pts[1], pts[2], pts[3]).unwrap();
            let y = mf.degree(x);
            prop_assert!((0.0..=1.0).contains(&y));
        }
    }
}
