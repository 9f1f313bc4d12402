//! Distance metric and local planar projection.
//!
//! All hot-loop distances use an equirectangular projection around a single
//! reference latitude: `Δy = Δlat·111 320`, `Δx = Δlon·111 320·cos(φref)`.
//! At the 100 m scale of this pipeline the error against the great circle is
//! well under 0.1%. [`haversine_m`] is kept as an independent check.

/// Meters per degree of latitude used by the projection.
pub const METERS_PER_DEGREE: f64 = 111_320.0;

/// Sphere radius used by [`haversine_m`]; the WGS84 semi-major axis, which
/// is the radius implied by [`METERS_PER_DEGREE`].
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;

/// A position in projected meters relative to a projection origin.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        PlanarPoint { x, y }
    }

    #[inline]
    pub fn distance_sq(self, other: PlanarPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    #[inline]
    pub fn distance(self, other: PlanarPoint) -> f64 {
        self.distance_sq(other).sqrt()
    }

    /// The inclusive proximity test shared by every contact and home check.
    #[inline]
    pub fn within(self, other: PlanarPoint, radius: f64) -> bool {
        self.distance_sq(other) <= radius * radius
    }

    pub fn offset(self, dx: f64, dy: f64) -> PlanarPoint {
        PlanarPoint::new(self.x + dx, self.y + dy)
    }
}

/// Equirectangular projection with a fixed reference latitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    origin_lat: f64,
    origin_lon: f64,
    ref_lat: f64,
    meters_per_lon: f64,
}

impl Projection {
    pub fn new(origin_lat: f64, origin_lon: f64, ref_lat: f64) -> Self {
        Projection {
            origin_lat,
            origin_lon,
            ref_lat,
            meters_per_lon: METERS_PER_DEGREE * ref_lat.to_radians().cos(),
        }
    }

    pub fn origin(&self) -> (f64, f64) {
        (self.origin_lat, self.origin_lon)
    }

    pub fn ref_lat(&self) -> f64 {
        self.ref_lat
    }

    pub fn meters_per_lon(&self) -> f64 {
        self.meters_per_lon
    }

    #[inline]
    pub fn project(&self, lat: f64, lon: f64) -> PlanarPoint {
        PlanarPoint {
            x: (lon - self.origin_lon) * self.meters_per_lon,
            y: (lat - self.origin_lat) * METERS_PER_DEGREE,
        }
    }

    /// Returns `(lat, lon)`.
    #[inline]
    pub fn unproject(&self, p: PlanarPoint) -> (f64, f64) {
        (
            self.origin_lat + p.y / METERS_PER_DEGREE,
            self.origin_lon + p.x / self.meters_per_lon,
        )
    }

    pub fn distance_m(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        self.project(a.0, a.1).distance(self.project(b.0, b.1))
    }
}

/// Great-circle distance in meters between two `(lat, lon)` pairs.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().asin()
}
