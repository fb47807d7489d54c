use serde::{Deserialize, Serialize};

/// 2-D point or vector in pixel units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector at `angle` radians from +x (y down, so positive angles turn clockwise on screen).
    pub fn from_angle(angle: f64) -> Self {
        Self::new(angle.cos(), angle.sin())
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm()
    }

    pub fn normalized(self) -> Point {
        let n = self.norm();
        Point::new(self.x / n, self.y / n)
    }

    pub fn rotated(self, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand normal `(-y, x)`.
    pub fn perp(self) -> Point {
        Point::new(-self.y, self.x)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Unsigned angle between two vectors, in radians.
    pub fn angle_to(self, o: Point) -> f64 {
        self.cross(o).abs().atan2(self.dot(o))
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

impl std::ops::Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

/// Distance from `p` to the nearest point of the unit pixel square centered at `(px, py)`.
pub fn dist_to_pixel(p: Point, px: usize, py: usize) -> f64 {
    let dx = ((p.x - px as f64).abs() - 0.5).max(0.0);
    let dy = ((p.y - py as f64).abs() - 0.5).max(0.0);
    dx.hypot(dy)
}

/// Distance from `p` to the farthest corner of the pixel square centered at `(px, py)`.
pub fn far_corner_dist(p: Point, px: usize, py: usize) -> f64 {
    let dx = (p.x - px as f64).abs() + 0.5;
    let dy = (p.y - py as f64).abs() + 0.5;
    dx.hypot(dy)
}
