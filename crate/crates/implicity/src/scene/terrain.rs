//! Smooth analytic terrain: a base level plus low-frequency sinusoids and
//! a few Gaussian hill kernels.

/// One sinusoidal terrain component: amp * sin(2*pi*(x*fx + y*fy) + phase).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineWave {
    pub amp: f64,
    pub fx: f64,
    pub fy: f64,
    pub phase: f64,
}

/// One Gaussian hill: amp * exp(-((x-cx)^2 + (y-cy)^2) / (2*radius^2)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hill {
    pub amp: f64,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Terrain {
    pub base: f64,
    pub waves: Vec<SineWave>,
    pub hills: Vec<Hill>,
}

impl Terrain {
    pub fn flat(base: f64) -> Terrain {
        Terrain { base, waves: Vec::new(), hills: Vec::new() }
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        let mut z = self.base;
        for w in &self.waves {
            z += w.amp * (std::f64::consts::TAU * (x * w.fx + y * w.fy) + w.phase).sin();
        }
        for h in &self.hills {
            let d2 = (x - h.cx).powi(2) + (y - h.cy).powi(2);
            z += h.amp * (-d2 / (2.0 * h.radius * h.radius)).exp();
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_terrain_is_constant() {
        let t = Terrain::flat(412.5);
        assert_eq!(t.height(0.0, 0.0), 412.5);
        assert_eq!(t.height(123.4, -56.7), 412.5);
    }

    #[test]
    fn wave_amplitude_bounds_height() {
        let t = Terrain {
            base: 100.0,
            waves: vec![SineWave { amp: 3.0, fx: 0.01, fy: 0.004, phase: 0.3 }],
            hills: vec![],
        };
        for i in 0..100 {
            let z = t.height(i as f64 * 7.3, i as f64 * 2.1);
            assert!(z >= 97.0 && z <= 103.0);
        }
    }
}
