//! Disk-array and HD-thread layers.
//!
//! Extent reads are spread round-robin over the devices of an array, adjacent
//! extents on one device are coalesced into a single request, and every issued
//! request is accounted in [`IoStats`]. Two backends exist: a cost model
//! (`seek_cost + length / bandwidth` per request) whose payload bytes may come
//! from the table file or be zero-filled, and a real file backend using
//! positional reads.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::os::unix::fs::FileExt;
use std::sync::mpsc;
use std::time::Instant;

use thiserror::Error;

use crate::catalog::{ChunkId, DataUnitKey, Extent};

pub const MIN_ALIGNMENT: u64 = 4096;
const MIB: f64 = (1u64 << 20) as f64;

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("device count must be at least 1")]
    NoDevices,
    #[error("device profile invalid: {0}")]
    InvalidProfile(String),
    #[error("overlapping requests on device {device_id}: [{first_offset}, +{first_length}) and offset {second_offset}")]
    Overlap {
        device_id: u32,
        first_offset: u64,
        first_length: u64,
        second_offset: u64,
    },
    #[error("requests on device {device_id} are not sorted by offset")]
    Unsorted { device_id: u32 },
    #[error("request on device {device_id} at offset {offset} is not aligned to {alignment} bytes")]
    Unaligned {
        device_id: u32,
        offset: u64,
        alignment: u64,
    },
    #[error("zero-length request on device {device_id} at offset {offset}")]
    EmptyRequest { device_id: u32, offset: u64 },
    #[error("request on device {device_id} at offset {offset} (+{length}) reads past end of file ({file_len} bytes)")]
    PastEnd {
        device_id: u32,
        offset: u64,
        length: u64,
        file_len: u64,
    },
    #[error("read failed on device {device_id} at offset {offset}: {source}")]
    Io {
        device_id: u32,
        offset: u64,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = DeviceError> = std::result::Result<T, E>;

/// Cost model of one device: a seek term per request plus transfer time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceProfile {
    /// Seconds charged per discontiguous positioning.
    pub seek_cost: f64,
    /// Bytes per second.
    pub bandwidth: f64,
    pub alignment: u64,
}

impl DeviceProfile {
    pub const HDD: DeviceProfile = DeviceProfile {
        seek_cost: 0.005,
        bandwidth: 150.0 * MIB,
        alignment: MIN_ALIGNMENT,
    };

    pub const SSD: DeviceProfile = DeviceProfile {
        seek_cost: 0.000_02,
        bandwidth: 2048.0 * MIB,
        alignment: MIN_ALIGNMENT,
    };

    pub fn new(seek_cost: f64, bandwidth: f64, alignment: u64) -> Result<Self> {
        if !(seek_cost >= 0.0) || !seek_cost.is_finite() {
            return Err(DeviceError::InvalidProfile(format!("seek_cost {seek_cost}")));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(DeviceError::InvalidProfile(format!("bandwidth {bandwidth}")));
        }
        if alignment < MIN_ALIGNMENT || !alignment.is_power_of_two() {
            return Err(DeviceError::InvalidProfile(format!(
                "alignment {alignment} must be a power of two >= {MIN_ALIGNMENT}"
            )));
        }
        Ok(Self {
            seek_cost,
            bandwidth,
            alignment,
        })
    }

    /// Simulated service time of one request.
    pub fn request_time(&self, length: u64) -> f64 {
        self.seek_cost + length as f64 / self.bandwidth
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoRequest {
    pub device_id: u32,
    pub offset: u64,
    pub length: u64,
    /// Data units served by this request.
    pub origins: BTreeSet<DataUnitKey>,
}

impl IoRequest {
    pub fn end(&self) -> u64 {
        self.offset + self.length
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DeviceStats {
    pub request_count: u64,
    pub bytes_read: u64,
    pub busy_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IoStats {
    pub request_count: u64,
    pub bytes_read: u64,
    pub sim_time: f64,
    pub per_device: Vec<DeviceStats>,
}

impl IoStats {
    pub fn with_devices(devices: usize) -> Self {
        Self {
            per_device: vec![DeviceStats::default(); devices],
            ..Self::default()
        }
    }

    /// Fold a single-device delta into the totals.
    pub fn record(&mut self, device_id: u32, delta: DeviceStats) {
        let idx = device_id as usize;
        if self.per_device.len() <= idx {
            self.per_device.resize(idx + 1, DeviceStats::default());
        }
        let dev = &mut self.per_device[idx];
        dev.request_count += delta.request_count;
        dev.bytes_read += delta.bytes_read;
        dev.busy_time += delta.busy_time;
        self.request_count += delta.request_count;
        self.bytes_read += delta.bytes_read;
        self.sim_time += delta.busy_time;
    }

    pub fn merge(&mut self, other: &IoStats) {
        for (id, d) in other.per_device.iter().enumerate() {
            self.record(id as u32, *d);
        }
    }
}

/// Assign extents to devices round-robin within each chunk's segment run and
/// return one offset-sorted request list per device.
pub fn dispatch(extents: &[(DataUnitKey, Extent)], devices: usize) -> Result<Vec<Vec<IoRequest>>> {
    if devices == 0 {
        return Err(DeviceError::NoDevices);
    }
    let mut by_chunk: BTreeMap<ChunkId, Vec<(DataUnitKey, Extent)>> = BTreeMap::new();
    for &(key, ext) in extents {
        by_chunk.entry(key.chunk_id).or_default().push((key, ext));
    }
    let mut out = vec![Vec::new(); devices];
    for group in by_chunk.into_values() {
        let mut group = group;
        group.sort_by_key(|(_, e)| e.offset);
        for (ordinal, (key, ext)) in group.into_iter().enumerate() {
            let device_id = (ordinal % devices) as u32;
            out[device_id as usize].push(IoRequest {
                device_id,
                offset: ext.offset,
                length: ext.length,
                origins: BTreeSet::from([key]),
            });
        }
    }
    for list in &mut out {
        list.sort_by_key(|r| r.offset);
    }
    Ok(out)
}

/// Merge maximal runs of byte-adjacent requests. Input must be one device's
/// offset-sorted, non-overlapping requests.
pub fn coalesce(requests: Vec<IoRequest>) -> Result<Vec<IoRequest>> {
    let mut out: Vec<IoRequest> = Vec::with_capacity(requests.len());
    for req in requests {
        if req.length == 0 {
            return Err(DeviceError::EmptyRequest {
                device_id: req.device_id,
                offset: req.offset,
            });
        }
        if let Some(last) = out.last_mut() {
            if req.offset < last.offset {
                return Err(DeviceError::Unsorted {
                    device_id: req.device_id,
                });
            }
            if req.offset < last.end() {
                return Err(DeviceError::Overlap {
                    device_id: req.device_id,
                    first_offset: last.offset,
                    first_length: last.length,
                    second_offset: req.offset,
                });
            }
            if req.offset == last.end() && req.device_id == last.device_id {
                last.length += req.length;
                last.origins.extend(req.origins);
                continue;
            }
        }
        out.push(req);
    }
    Ok(out)
}

/// Where simulated reads take their payload bytes from.
#[derive(Debug, Clone, Copy)]
pub enum SimSource<'a> {
    /// Zero-filled buffers; timing only.
    Zeros,
    /// Positional reads from the table file; timing still simulated.
    File { file: &'a File, file_len: u64 },
}

/// Serve `requests` under the cost model. Returns one buffer per request and
/// the stats delta.
pub fn execute_sim(
    requests: &[IoRequest],
    profile: &DeviceProfile,
    source: SimSource<'_>,
) -> Result<(Vec<Vec<u8>>, IoStats)> {
    let mut stats = IoStats::default();
    let mut buffers = Vec::with_capacity(requests.len());
    for req in requests {
        let bytes = match source {
            SimSource::Zeros => vec![0u8; req.length as usize],
            SimSource::File { file, file_len } => {
                if req.end() > file_len {
                    return Err(DeviceError::PastEnd {
                        device_id: req.device_id,
                        offset: req.offset,
                        length: req.length,
                        file_len,
                    });
                }
                positional_read(file, req)?
            }
        };
        stats.record(
            req.device_id,
            DeviceStats {
                request_count: 1,
                bytes_read: req.length,
                busy_time: profile.request_time(req.length),
            },
        );
        buffers.push(bytes);
    }
    Ok((buffers, stats))
}

/// Serve `requests` with real positional reads. Elapsed wall-clock time is
/// recorded as the device busy time.
pub fn execute_file(
    requests: &[IoRequest],
    file: &File,
    alignment: u64,
) -> Result<(Vec<Vec<u8>>, IoStats)> {
    let mut stats = IoStats::default();
    let mut buffers = Vec::with_capacity(requests.len());
    for req in requests {
        if req.offset % alignment != 0 {
            return Err(DeviceError::Unaligned {
                device_id: req.device_id,
                offset: req.offset,
                alignment,
            });
        }
        let started = Instant::now();
        let bytes = positional_read(file, req)?;
        stats.record(
            req.device_id,
            DeviceStats {
                request_count: 1,
                bytes_read: req.length,
                busy_time: started.elapsed().as_secs_f64(),
            },
        );
        buffers.push(bytes);
    }
    Ok((buffers, stats))
}

fn positional_read(file: &File, req: &IoRequest) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; req.length as usize];
    file.read_exact_at(&mut buf, req.offset)
        .map_err(|source| DeviceError::Io {
            device_id: req.device_id,
            offset: req.offset,
            source,
        })?;
    Ok(buf)
}

#[derive(Debug)]
pub enum Backend {
    Sim {
        profile: DeviceProfile,
        /// `None` serves zero-filled payloads.
        file: Option<(File, u64)>,
    },
    File {
        file: File,
        alignment: u64,
    },
}

impl Backend {
    fn execute(&self, requests: &[IoRequest]) -> Result<(Vec<Vec<u8>>, IoStats)> {
        match self {
            Backend::Sim { profile, file } => {
                let source = match file {
                    Some((file, file_len)) => SimSource::File {
                        file,
                        file_len: *file_len,
                    },
                    None => SimSource::Zeros,
                };
                execute_sim(requests, profile, source)
            }
            Backend::File { file, alignment } => execute_file(requests, file, *alignment),
        }
    }

    pub fn is_simulated(&self) -> bool {
        matches!(self, Backend::Sim { .. })
    }
}

/// How a [`DeviceArray`] services the per-device queues of one read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Devices served one after another on the caller's thread, in device order.
    #[default]
    Deterministic,
    /// One worker thread per busy device; completions come back over a channel
    /// and are folded into the stats on the caller's thread.
    Parallel,
}

/// An array of devices backed by one table file.
#[derive(Debug)]
pub struct DeviceArray {
    devices: usize,
    backend: Backend,
    coalescing: bool,
    execution: Execution,
    stats: IoStats,
}

impl DeviceArray {
    pub fn new(devices: usize, backend: Backend) -> Result<Self> {
        if devices == 0 {
            return Err(DeviceError::NoDevices);
        }
        Ok(Self {
            devices,
            backend,
            coalescing: true,
            execution: Execution::Deterministic,
            stats: IoStats::with_devices(devices),
        })
    }

    pub fn with_coalescing(mut self, on: bool) -> Self {
        self.coalescing = on;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn stats(&self) -> &IoStats {
        &self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = IoStats::with_devices(self.devices);
    }

    /// Read whole data units. Returns each unit's bytes keyed by unit.
    pub fn read_units(
        &mut self,
        units: &[(DataUnitKey, &[Extent])],
    ) -> Result<BTreeMap<DataUnitKey, Vec<u8>>> {
        let mut flat = Vec::new();
        let mut out = BTreeMap::new();
        for (key, extents) in units {
            let total: u64 = extents.iter().map(|e| e.length).sum();
            out.insert(*key, Vec::with_capacity(total as usize));
            flat.extend(extents.iter().map(|e| (*key, *e)));
        }
        if flat.is_empty() {
            return Ok(out);
        }
        let mut queues = dispatch(&flat, self.devices)?;
        if self.coalescing {
            for q in &mut queues {
                *q = coalesce(std::mem::take(q))?;
            }
        }

        let completions = match self.execution {
            Execution::Deterministic => {
                let mut done = Vec::with_capacity(queues.len());
                for q in &queues {
                    done.push(self.backend.execute(q)?);
                }
                done
            }
            Execution::Parallel => self.execute_parallel(&queues)?,
        };

        // Slice every issued request back into its origin extents.
        let mut pieces: BTreeMap<(DataUnitKey, u64), Vec<u8>> = BTreeMap::new();
        let mut ext_by_unit: BTreeMap<DataUnitKey, Vec<Extent>> = BTreeMap::new();
        for (key, ext) in &flat {
            ext_by_unit.entry(*key).or_default().push(*ext);
        }
        for (queue, (buffers, delta)) in queues.iter().zip(completions) {
            self.stats.merge(&delta);
            for (req, buf) in queue.iter().zip(buffers) {
                for key in &req.origins {
                    for ext in &ext_by_unit[key] {
                        if ext.offset >= req.offset && ext.end() <= req.end() {
                            let lo = (ext.offset - req.offset) as usize;
                            let hi = lo + ext.length as usize;
                            pieces.insert((*key, ext.offset), buf[lo..hi].to_vec());
                        }
                    }
                }
            }
        }
        for ((key, _), bytes) in pieces {
            out.get_mut(&key).expect("unit requested").extend_from_slice(&bytes);
        }
        Ok(out)
    }

    fn execute_parallel(&self, queues: &[Vec<IoRequest>]) -> Result<Vec<(Vec<Vec<u8>>, IoStats)>> {
        let (tx, rx) = mpsc::channel();
        std::thread::scope(|scope| {
            for (device, q) in queues.iter().enumerate() {
                if q.is_empty() {
                    continue;
                }
                let tx = tx.clone();
                let backend = &self.backend;
                scope.spawn(move || {
                    let _ = tx.send((device, backend.execute(q)));
                });
            }
        });
        drop(tx);
        let mut done: Vec<Option<(Vec<Vec<u8>>, IoStats)>> = vec![None; queues.len()];
        for (device, result) in rx {
            done[device] = Some(result?);
        }
        Ok(done
            .into_iter()
            .map(|d| d.unwrap_or_default())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(c: u32, col: u16) -> DataUnitKey {
        DataUnitKey::new(c, col)
    }

    fn ext(offset: u64, length: u64) -> Extent {
        Extent {
            device_id: 0,
            offset,
            length,
        }
    }

    fn req(offset: u64, length: u64) -> IoRequest {
        IoRequest {
            device_id: 0,
            offset,
            length,
            origins: BTreeSet::from([key(0, offset as u16)]),
        }
    }

    #[test]
    fn single_device_gets_everything_sorted() {
        let extents = vec![(key(1, 0), ext(8192, 10)), (key(0, 0), ext(0, 10))];
        let d = dispatch(&extents, 1).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(
            d[0].iter().map(|r| r.offset).collect::<Vec<_>>(),
            vec![0, 8192]
        );
    }

    #[test]
    fn round_robin_within_segment() {
        let extents: Vec<_> = (0..4).map(|i| (key(0, 0), ext(i * 4096, 4096))).collect();
        let d = dispatch(&extents, 2).unwrap();
        assert_eq!(
            d[0].iter().map(|r| r.offset).collect::<Vec<_>>(),
            vec![0, 8192]
        );
        assert_eq!(
            d[1].iter().map(|r| r.offset).collect::<Vec<_>>(),
            vec![4096, 12288]
        );
        assert!(d.iter().flatten().all(|r| r.device_id < 2));
        assert!(matches!(dispatch(&extents, 0), Err(DeviceError::NoDevices)));
        assert!(dispatch(&[], 3).unwrap().iter().all(|q| q.is_empty()));
    }

    #[test]
    fn coalesce_adjacent_and_gap() {
        let merged = coalesce(vec![req(0, 4096), req(4096, 4096)]).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!((merged[0].offset, merged[0].length), (0, 8192));
        assert_eq!(merged[0].origins.len(), 2);

        let gap = coalesce(vec![req(0, 4096), req(8192, 4096)]).unwrap();
        assert_eq!(gap.len(), 2);

        assert!(matches!(
            coalesce(vec![req(0, 8192), req(4096, 4096)]),
            Err(DeviceError::Overlap { .. })
        ));
        assert!(matches!(
            coalesce(vec![req(8192, 10), req(0, 10)]),
            Err(DeviceError::Unsorted { .. })
        ));
    }

    #[test]
    fn sim_cost_formula() {
        let profile = DeviceProfile::new(0.005, 100.0 * MIB, 4096).unwrap();
        let (_, empty) = execute_sim(&[], &profile, SimSource::Zeros).unwrap();
        assert_eq!((empty.request_count, empty.sim_time), (0, 0.0));

        let (bufs, one) = execute_sim(&[req(0, 1 << 20)], &profile, SimSource::Zeros).unwrap();
        assert_eq!(bufs[0].len(), 1 << 20);
        assert!((one.sim_time - 0.015).abs() < 1e-12);
        assert_eq!(one.request_count, 1);
    }

    #[test]
    fn coalesced_adjacent_pair_saves_one_seek() {
        let profile = DeviceProfile::HDD;
        let pair = vec![req(0, 512 << 10), req(512 << 10, 512 << 10)];
        let (_, split) = execute_sim(&pair, &profile, SimSource::Zeros).unwrap();
        let merged = coalesce(pair).unwrap();
        let (_, joined) = execute_sim(&merged, &profile, SimSource::Zeros).unwrap();
        assert!(joined.sim_time < split.sim_time);
        assert!((split.sim_time - joined.sim_time - profile.seek_cost).abs() < 1e-12);
        assert_eq!(split.bytes_read, joined.bytes_read);
    }

    #[test]
    fn profile_validation() {
        assert!(DeviceProfile::new(-1.0, 1.0, 4096).is_err());
        assert!(DeviceProfile::new(0.0, 0.0, 4096).is_err());
        assert!(DeviceProfile::new(0.0, 1.0, 512).is_err());
        assert!(DeviceProfile::new(0.0, 1.0, 8192).is_ok());
    }

    #[test]
    fn file_backend_alignment_and_eof() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f");
        let data: Vec<u8> = (0..16384u32).map(|i| (i % 251) as u8).collect();
        std::fs::write(&path, &data).unwrap();
        let file = File::open(&path).unwrap();

        let (none, stats) = execute_file(&[], &file, 4096).unwrap();
        assert!(none.is_empty());
        assert_eq!(stats.request_count, 0);

        let (bufs, stats) = execute_file(&[req(4096, 100)], &file, 4096).unwrap();
        assert_eq!(bufs[0], data[4096..4196]);
        assert_eq!(stats.request_count, 1);

        assert!(matches!(
            execute_file(&[req(100, 10)], &file, 4096),
            Err(DeviceError::Unaligned { offset: 100, .. })
        ));
        let err = execute_file(&[req(16384, 10)], &file, 4096).unwrap_err();
        assert!(matches!(err, DeviceError::Io { offset: 16384, .. }));

        let source = SimSource::File {
            file: &file,
            file_len: 16384,
        };
        assert!(matches!(
            execute_sim(&[req(12288, 8192)], &DeviceProfile::SSD, source),
            Err(DeviceError::PastEnd { .. })
        ));
    }

    #[test]
    fn device_array_reassembles_units() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f");
        let data: Vec<u8> = (0..65536u32).map(|i| (i * 7 % 253) as u8).collect();
        std::fs::write(&path, &data).unwrap();
        let unit_a = [ext(0, 4096), ext(4096, 4096), ext(8192, 100)];
        let unit_b = [ext(12288, 4096), ext(16384, 10)];
        let units = [(key(0, 0), &unit_a[..]), (key(0, 1), &unit_b[..])];

        for devices in 1..4 {
            for execution in [Execution::Deterministic, Execution::Parallel] {
                let file = File::open(&path).unwrap();
                let backend = Backend::Sim {
                    profile: DeviceProfile::HDD,
                    file: Some((file, data.len() as u64)),
                };
                let mut array = DeviceArray::new(devices, backend)
                    .unwrap()
                    .with_execution(execution);
                let got = array.read_units(&units).unwrap();
                assert_eq!(got[&key(0, 0)], data[..8292]);
                assert_eq!(got[&key(0, 1)], data[12288..16394]);
                assert_eq!(array.stats().bytes_read, 8292 + 4106);
                let per_dev: u64 = array.stats().per_device.iter().map(|d| d.bytes_read).sum();
                assert_eq!(per_dev, array.stats().bytes_read);
            }
        }
    }
}
