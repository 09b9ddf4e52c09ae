/// NEMA voltage imbalance index of a bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImbalanceIndex {
    Value(f64),
    /// Bus has fewer than three phases (or a non-positive magnitude).
    NotApplicable,
}

impl ImbalanceIndex {
    pub fn value(self) -> Option<f64> {
        match self {
            ImbalanceIndex::Value(v) => Some(v),
            ImbalanceIndex::NotApplicable => None,
        }
    }
}

/// Maximum deviation of a phase magnitude from the three-phase mean, relative to the mean.
pub fn imbalance_index(magnitudes: [Option<f64>; 3]) -> ImbalanceIndex {
    let mut v = [0.0; 3];
    for (dst, src) in v.iter_mut().zip(magnitudes) {
        match src {
            Some(m) if m > 0.0 && m.is_finite() => *dst = m,
            _ => return ImbalanceIndex::NotApplicable,
        }
    }
    let avg = (v[0] + v[1] + v[2]) / 3.0;
    let dev = v.iter().map(|x| (x - avg).abs()).fold(0.0, f64::max);
    ImbalanceIndex::Value(dev / avg)
}

/// Same index from squared magnitudes (p.u.²).
pub fn imbalance_index_from_u(u: [Option<f64>; 3]) -> ImbalanceIndex {
    imbalance_index(u.map(|x| x.filter(|x| *x > 0.0).map(f64::sqrt)))
}
