//! Four-point measurement protocols over a ring of electrodes.
//!
//! The adjacent-adjacent ("skip") set drives every adjacent electrode pair
//! and senses on every adjacent pair disjoint from it, giving `C(C-3)`
//! measurements: both members of each reciprocity pair are kept, matching
//! the armband firmware convention. Ordering is drive-major with sense
//! indices ascending.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One four-point measurement: current on `drive`, voltage on `sense`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Measurement {
    pub drive: (usize, usize),
    pub sense: (usize, usize),
}

impl Measurement {
    pub fn electrodes(&self) -> [usize; 4] {
        [self.drive.0, self.drive.1, self.sense.0, self.sense.1]
    }

    fn uses_any(&self, bad: &BTreeSet<usize>) -> bool {
        self.electrodes().iter().any(|e| bad.contains(e))
    }
}

/// Ordered measurement list with reciprocity-partner metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub electrode_count: usize,
    pub measurements: Vec<Measurement>,
    /// Index of each measurement's reciprocity partner (drive and sense swapped).
    pub onsager_partner: Vec<Option<usize>>,
}

/// Maximum number of independent measurements for `c` contacts: `c(c-3)/2`.
pub fn max_independent(c: usize) -> Result<usize> {
    if c < 3 {
        return Err(Error::InvalidParameter(format!(
            "at least 3 electrodes required, got {c}"
        )));
    }
    Ok(c * (c - 3) / 2)
}

/// Builds the full skip protocol for `c` electrodes.
pub fn skip_protocol(c: usize) -> Result<Protocol> {
    if c < 5 {
        return Err(Error::InvalidParameter(format!(
            "skip protocol needs at least 5 electrodes (no disjoint sense pair exists below that), got {c}"
        )));
    }
    let mut measurements = Vec::with_capacity(c * (c - 3));
    for i in 0..c {
        let drive = (i, (i + 1) % c);
        for j in 0..c {
            let sense = (j, (j + 1) % c);
            let d = [drive.0, drive.1];
            if d.contains(&sense.0) || d.contains(&sense.1) {
                continue;
            }
            measurements.push(Measurement { drive, sense });
        }
    }
    let onsager_partner = measurements
        .iter()
        .map(|m| {
            measurements
                .iter()
                .position(|p| p.drive == m.sense && p.sense == m.drive)
        })
        .collect();
    Ok(Protocol { electrode_count: c, measurements, onsager_partner })
}

impl Protocol {
    /// Number of measurements, `D`.
    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    /// Indices of measurements that avoid every electrode in `bad_electrodes`,
    /// in protocol order. Errors if nothing survives.
    pub fn valid_subset(&self, bad_electrodes: &BTreeSet<usize>) -> Result<Vec<usize>> {
        if let Some(&e) = bad_electrodes.iter().find(|&&e| e >= self.electrode_count) {
            return Err(Error::InvalidParameter(format!(
                "bad electrode {e} out of range 0..{}",
                self.electrode_count
            )));
        }
        let valid: Vec<usize> = self
            .measurements
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.uses_any(bad_electrodes))
            .map(|(i, _)| i)
            .collect();
        if valid.is_empty() {
            return Err(Error::EmptySelection(format!(
                "no measurement avoids bad electrodes {bad_electrodes:?}"
            )));
        }
        Ok(valid)
    }

    /// One measurement per reciprocity pair: keeps the first member, for
    /// analyses at the independent count `c(c-3)/2`.
    pub fn deduplicate_onsager(&self) -> Protocol {
        let mut keep = Vec::new();
        let mut seen = vec![false; self.measurements.len()];
        for (i, &partner) in self.onsager_partner.iter().enumerate() {
            if seen[i] {
                continue;
            }
            keep.push(self.measurements[i]);
            seen[i] = true;
            if let Some(p) = partner {
                seen[p] = true;
            }
        }
        let n = keep.len();
        Protocol {
            electrode_count: self.electrode_count,
            measurements: keep,
            onsager_partner: vec![None; n],
        }
    }

    /// Canonical JSON used for hashing and file stamping.
    pub fn canonical_json(&self) -> Vec<u8> {
        #[derive(Serialize)]
        struct Wire<'a> {
            electrode_count: usize,
            measurements: Vec<[usize; 4]>,
            #[serde(skip)]
            _p: &'a (),
        }
        let wire = Wire {
            electrode_count: self.electrode_count,
            measurements: self.measurements.iter().map(|m| m.electrodes()).collect(),
            _p: &(),
        };
        serde_json::to_vec(&wire).expect("protocol serializes")
    }

    /// Short content hash stamped onto every snapshot and basis artifact.
    pub fn id(&self) -> String {
        crate::io::short_hash(&self.canonical_json())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, m) in self.measurements.iter().enumerate() {
            let e = m.electrodes();
            let set: BTreeSet<usize> = e.iter().copied().collect();
            if set.len() != 4 {
                return Err(Error::InvalidParameter(format!(
                    "measurement {i} reuses an electrode: {e:?}"
                )));
            }
            if e.iter().any(|&x| x >= self.electrode_count) {
                return Err(Error::InvalidParameter(format!(
                    "measurement {i} references electrode beyond {}",
                    self.electrode_count
                )));
            }
        }
        for (i, &p) in self.onsager_partner.iter().enumerate() {
            if let Some(p) = p {
                if self.onsager_partner.get(p).copied().flatten() != Some(i) {
                    return Err(Error::InvalidParameter(format!(
                        "onsager partnership at {i} is not an involution"
                    )));
                }
            }
        }
        Ok(())
    }
}
