use super::Vec3;

/// Uniform hash grid over a set of points.
///
/// Entries are bucketed with a stable counting sort, so query results come
/// back in insertion order and enumeration is deterministic.
#[derive(Debug, Default, Clone)]
pub struct SpatialHash {
    cell_size: f64,
    mask: usize,
    ids: Vec<u32>,
    cells: Vec<[i32; 3]>,
    starts: Vec<u32>,
    entries: Vec<u32>,
}

fn hash_cell(c: [i32; 3]) -> usize {
    let h = (c[0] as i64).wrapping_mul(73_856_093)
        ^ (c[1] as i64).wrapping_mul(19_349_663)
        ^ (c[2] as i64).wrapping_mul(83_492_791);
    h as usize
}

fn cell_of(p: &Vec3, cell_size: f64) -> [i32; 3] {
    [
        (p.x / cell_size).floor() as i32,
        (p.y / cell_size).floor() as i32,
        (p.z / cell_size).floor() as i32,
    ]
}

impl SpatialHash {
    /// Indexes `points` given as `(id, position)`. `cell_size` must be at
    /// least the largest query distance.
    pub fn build(&mut self, points: impl Iterator<Item = (u32, Vec3)>, cell_size: f64) {
        self.cell_size = cell_size;
        self.ids.clear();
        self.cells.clear();
        for (id, p) in points {
            self.ids.push(id);
            self.cells.push(cell_of(&p, cell_size));
        }
        let n = self.ids.len();
        let table = (2 * n).next_power_of_two().max(16);
        self.mask = table - 1;

        self.starts.clear();
        self.starts.resize(table + 1, 0);
        for c in &self.cells {
            self.starts[(hash_cell(*c) & self.mask) + 1] += 1;
        }
        for i in 0..table {
            self.starts[i + 1] += self.starts[i];
        }
        self.entries.clear();
        self.entries.resize(n, 0);
        let mut fill: Vec<u32> = self.starts[..table].to_vec();
        for (k, c) in self.cells.iter().enumerate() {
            let bucket = hash_cell(*c) & self.mask;
            self.entries[fill[bucket] as usize] = k as u32;
            fill[bucket] += 1;
        }
    }

    /// Calls `f(id)` for every indexed point in the 27 cells around `p`.
    pub fn for_each_near(&self, p: &Vec3, mut f: impl FnMut(u32)) {
        if self.ids.is_empty() {
            return;
        }
        let center = cell_of(p, self.cell_size);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let c = [center[0] + dx, center[1] + dy, center[2] + dz];
                    let bucket = hash_cell(c) & self.mask;
                    let range = self.starts[bucket] as usize..self.starts[bucket + 1] as usize;
                    for &k in &self.entries[range] {
                        if self.cells[k as usize] == c {
                            f(self.ids[k as usize]);
                        }
                    }
                }
            }
        }
    }
}
