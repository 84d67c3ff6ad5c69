/// Partially causal attention mask over the joint sequence: source positions
/// `0..=m` followed by target positions `m+1..=m+n+1`.
///
/// Source rows see the whole source and no target; target rows see the whole
/// source plus the target prefix up to and including themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    size: usize,
    source_len: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.size..(i + 1) * self.size]
    }

    /// Every position attends to every other (used to contrast with the
    /// partial mask).
    pub fn full(source_len: usize, target_len: usize) -> Self {
        let size = source_len + target_len;
        AttentionMask {
            size,
            source_len,
            allowed: vec![true; size * size],
        }
    }

    pub fn as_rows(&self) -> Vec<Vec<u8>> {
        (0..self.size)
            .map(|i| self.row(i).iter().map(|&b| u8::from(b)).collect())
            .collect()
    }
}

/// Mask for source indices `0..=m` and target indices `0..=n`.
pub fn build_mask(m: usize, n: usize) -> AttentionMask {
    mask_for_lengths(m + 1, n + 1)
}

/// Mask for `source_len` source rows and `target_len` target rows (which may
/// be zero).
pub fn mask_for_lengths(source_len: usize, target_len: usize) -> AttentionMask {
    let size = source_len + target_len;
    let mut allowed = vec![false; size * size];
    for i in 0..size {
        let row = &mut allowed[i * size..(i + 1) * size];
        row[..source_len].fill(true);
        if i >= source_len {
            row[source_len..=i].fill(true);
        }
    }
    AttentionMask {
        size,
        source_len,
        allowed,
    }
}
