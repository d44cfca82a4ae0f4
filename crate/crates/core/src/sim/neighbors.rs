//! Uniform-grid neighbor search with deterministic, index-sorted candidate
//! lists (CSR layout). Cell size equals the kernel support radius, so each
//! query scans the 3×3 block of cells around a particle in a fixed order.

/// Fixed spatial grid. Bounds are chosen once per run (from the container
/// extents plus a margin); particles outside the bounds are clamped into the
/// edge cells, which keeps the lists correct as long as the support radius is
/// honored by the clamp margin — the engine separately detects blow-ups long
/// before particles travel that far.
#[derive(Debug, Clone)]
pub struct NeighborGrid {
    min: [f64; 2],
    cell: f64,
    nx: usize,
    nz: usize,
}

/// CSR neighbor lists: `of(i)` yields candidate neighbors of `i` (all
/// particles within `radius`, possibly a few just outside — callers must
/// re-check distances; every pair within `radius` is guaranteed present).
/// Self is excluded. Lists are sorted by neighbor index.
#[derive(Debug, Clone)]
pub struct NeighborLists {
    offsets: Vec<usize>,
    entries: Vec<usize>,
}

impl NeighborLists {
    pub fn of(&self, i: usize) -> &[usize] {
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_entries(&self) -> usize {
        self.entries.len()
    }
}

impl NeighborGrid {
    /// `cell` must be ≥ the interaction radius (2h).
    pub fn new(min: [f64; 2], max: [f64; 2], cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        assert!(max[0] > min[0] && max[1] > min[1], "degenerate grid bounds");
        let nx = (((max[0] - min[0]) / cell).ceil() as usize).max(1);
        let nz = (((max[1] - min[1]) / cell).ceil() as usize).max(1);
        Self { min, cell, nx, nz }
    }

    fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let cx = ((p[0] - self.min[0]) / self.cell).floor();
        let cz = ((p[1] - self.min[1]) / self.cell).floor();
        let cx = (cx.max(0.0) as usize).min(self.nx - 1);
        let cz = (cz.max(0.0) as usize).min(self.nz - 1);
        (cx, cz)
    }

    /// Builds CSR candidate lists for all particles. Deterministic: cell
    /// buckets hold ascending particle indices (counting sort by cell), and
    /// the 3×3 neighborhood is scanned in row-major order, after which each
    /// list is sorted ascending.
    pub fn build(&self, pos: &[[f64; 2]]) -> NeighborLists {
        let n = pos.len();
        let ncells = self.nx * self.nz;

        // Counting sort of particle indices into cells.
        let mut cell_ids = vec![0usize; n];
        let mut counts = vec![0usize; ncells + 1];
        for (i, &p) in pos.iter().enumerate() {
            let (cx, cz) = self.cell_of(p);
            let c = cz * self.nx + cx;
            cell_ids[i] = c;
            counts[c + 1] += 1;
        }
        for c in 0..ncells {
            counts[c + 1] += counts[c];
        }
        let mut bucket: Vec<usize> = vec![0; n];
        let mut cursor = counts.clone();
        for i in 0..n {
            let c = cell_ids[i];
            bucket[cursor[c]] = i;
            cursor[c] += 1;
        }
        // Ascending indices within each bucket come for free from the stable
        // counting sort above (i iterates ascending).

        let radius2 = self.cell * self.cell;
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0usize);
        let mut entries: Vec<usize> = Vec::new();
        let mut scratch: Vec<usize> = Vec::new();
        for i in 0..n {
            scratch.clear();
            let (cx, cz) = self.cell_of(pos[i]);
            let x0 = cx.saturating_sub(1);
            let x1 = (cx + 1).min(self.nx - 1);
            let z0 = cz.saturating_sub(1);
            let z1 = (cz + 1).min(self.nz - 1);
            for zz in z0..=z1 {
                for xx in x0..=x1 {
                    let c = zz * self.nx + xx;
                    for &j in &bucket[counts[c]..counts[c + 1]] {
                        if j == i {
                            continue;
                        }
                        let dx = pos[i][0] - pos[j][0];
                        let dz = pos[i][1] - pos[j][1];
                        if dx * dx + dz * dz <= radius2 {
                            scratch.push(j);
                        }
                    }
                }
            }
            scratch.sort_unstable();
            entries.extend_from_slice(&scratch);
            offsets.push(entries.len());
        }
        NeighborLists { offsets, entries }
    }
}
