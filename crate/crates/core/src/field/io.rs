//! Binary container for a [`FeatureField`].
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic           [u8; 8]   b"IMAPFLD\0"
//! version         u32       1
//! leaf_size       f64
//! level_count     u32
//! feature_len     u32
//! bits_per_axis   u32
//! world_offset    [i64; 3]
//! slot_count      u64
//! per level (level_count times):
//!     entry_count u64
//!     entries     entry_count x (code u64, slot u32), ascending code
//! features        f64 x slot_count * feature_len
//! anchors         f64 x slot_count * feature_len
//! importance      f64 x slot_count * feature_len
//! anchored        u8  x slot_count   (0 or 1)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::table::MortonTable;
use super::{FeatureField, FieldLayout};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{MapError, Result};

pub const FIELD_MAGIC: &[u8; 8] = b"IMAPFLD\0";
pub const FIELD_VERSION: u32 = 1;

impl FeatureField {
    pub fn write_to<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = ByteWriter::new(w);
        let layout = &self.layout;
        w.bytes(FIELD_MAGIC)?;
        w.u32(FIELD_VERSION)?;
        w.f64(layout.leaf_size)?;
        w.u32(layout.level_count as u32)?;
        w.u32(layout.feature_len as u32)?;
        w.u32(layout.bits_per_axis)?;
        for o in layout.world_offset {
            w.i64(o)?;
        }
        w.u64(self.slot_count() as u64)?;
        for table in &self.tables {
            let entries = table.sorted_entries();
            w.u64(entries.len() as u64)?;
            for (code, slot) in entries {
                w.u64(code)?;
                w.u32(slot)?;
            }
        }
        for arr in [&self.features, &self.anchors, &self.importance] {
            for v in arr.iter() {
                w.f64(*v)?;
            }
        }
        for a in &self.anchored {
            w.bytes(&[*a as u8])?;
        }
        w.finish()
    }

    pub fn read_from<R: Read>(r: R, path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(r, path);
        let magic = r.array::<8>()?;
        if &magic != FIELD_MAGIC {
            return Err(MapError::format(path, "not a feature field file (bad magic)"));
        }
        let version = r.u32()?;
        if version != FIELD_VERSION {
            return Err(MapError::format(path, format!("unsupported field version {version}")));
        }
        let leaf_size = r.f64()?;
        let level_count = r.u32()? as usize;
        let feature_len = r.u32()? as usize;
        let bits_per_axis = r.u32()?;
        let world_offset = [r.i64()?, r.i64()?, r.i64()?];
        let layout = FieldLayout {
            leaf_size,
            level_count,
            feature_len,
            world_offset,
            bits_per_axis,
        };
        layout
            .validate()
            .map_err(|e| MapError::format(path, format!("invalid layout: {e}")))?;
        let slot_count = r.u64()? as usize;
        let mut tables = Vec::with_capacity(level_count);
        let mut seen = vec![false; slot_count];
        for _ in 0..level_count {
            let n = r.u64()? as usize;
            if n > slot_count {
                return Err(MapError::format(path, "level table larger than slot array"));
            }
            let mut table = MortonTable::with_capacity(n);
            for _ in 0..n {
                let code = r.u64()?;
                let slot = r.u32()?;
                if slot as usize >= slot_count || seen[slot as usize] || code >> 63 != 0 {
                    return Err(MapError::format(path, format!("bad table entry (code {code}, slot {slot})")));
                }
                seen[slot as usize] = true;
                if !table.insert(code, slot) {
                    return Err(MapError::format(path, format!("duplicate code {code}")));
                }
            }
            tables.push(table);
        }
        if seen.iter().any(|s| !s) {
            return Err(MapError::format(path, "slot not referenced by any level table"));
        }
        let n = slot_count * feature_len;
        let features = r.f64_vec(n)?;
        let anchors = r.f64_vec(n)?;
        let importance = r.f64_vec(n)?;
        let mut anchored = Vec::with_capacity(slot_count);
        for _ in 0..slot_count {
            match r.u8()? {
                0 => anchored.push(false),
                1 => anchored.push(true),
                b => return Err(MapError::format(path, format!("bad anchored flag {b}"))),
            }
        }
        r.expect_eof()?;
        Ok(Self {
            layout,
            tables,
            features,
            anchors,
            importance,
            anchored,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| MapError::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| MapError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| MapError::io(path, e))?;
        Self::read_from(BufReader::new(file), path)
    }
}
