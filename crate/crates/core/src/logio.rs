//! TSL sensor-log parsing/serialization and the chain-graph output document.
//!
//! TSL is line oriented UTF-8. Fields are separated by `;`, lines starting
//! with `%` are comments:
//!
//! ```text
//! ACCE;<app_ts>;<sensor_ts>;<ax>;<ay>;<az>;<acc>
//! GYRO;<app_ts>;<sensor_ts>;<gx>;<gy>;<gz>;<acc>
//! MAGN;<app_ts>;<sensor_ts>;<mx>;<my>;<mz>;<acc>
//! PRES;<app_ts>;<sensor_ts>;<hPa>;<acc>
//! WIFI;<app_ts>;<sensor_ts>;<ssid>;<bssid>;<freq>;<rssi>
//! ```
//!
//! Records with other tags (GNSS, cellular, ...) are skipped and counted.
//! Numbers are written with the shortest decimal representation that reads
//! back to the same `f64`, so `parse(serialize(log)) == log` holds bit for bit.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::featurize::ChainGraph;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("input is not valid UTF-8 (first bad byte at offset {offset})")]
    Encoding { offset: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot serialize: {0}")]
    Unrepresentable(String),
    #[error("chain-graph document: {0}")]
    Document(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A three-axis sample (accelerometer m/s², gyroscope rad/s, magnetometer µT).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionSample {
    pub app_timestamp: f64,
    pub sensor_timestamp: f64,
    pub values: [f64; 3],
    pub accuracy: i32,
}

/// A barometer sample in hPa.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressureSample {
    pub app_timestamp: f64,
    pub sensor_timestamp: f64,
    pub hpa: f64,
    pub accuracy: i32,
}

/// A WiFi access point MAC address. Displays as lowercase `aa:bb:cc:dd:ee:ff`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bssid(pub [u8; 6]);

impl fmt::Display for Bssid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for Bssid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 6];
        let mut parts = s.split(':');
        for slot in out.iter_mut() {
            let part = parts.next().ok_or_else(|| format!("bssid {s:?} has fewer than 6 octets"))?;
            if part.len() != 2 {
                return Err(format!("bssid {s:?}: octet {part:?} is not two hex digits"));
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| format!("bssid {s:?}: bad octet {part:?}"))?;
        }
        if parts.next().is_some() {
            return Err(format!("bssid {s:?} has more than 6 octets"));
        }
        Ok(Bssid(out))
    }
}

impl Serialize for Bssid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Bssid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WifiObservation {
    pub app_timestamp: f64,
    pub sensor_timestamp: f64,
    pub ssid: String,
    pub bssid: Bssid,
    pub frequency: u32,
    pub rssi: i32,
}

/// All streams of one recording session, each sorted by `app_timestamp`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensorLog {
    pub source_id: String,
    pub accel: Vec<MotionSample>,
    pub gyro: Vec<MotionSample>,
    pub magn: Vec<MotionSample>,
    pub baro: Vec<PressureSample>,
    pub wifi: Vec<WifiObservation>,
}

impl SensorLog {
    pub fn is_empty(&self) -> bool {
        self.accel.is_empty()
            && self.gyro.is_empty()
            && self.magn.is_empty()
            && self.baro.is_empty()
            && self.wifi.is_empty()
    }

    /// Stable sort of every stream by app timestamp; equal timestamps keep
    /// their input order.
    pub fn sort_streams(&mut self) {
        self.accel.sort_by(|a, b| a.app_timestamp.total_cmp(&b.app_timestamp));
        self.gyro.sort_by(|a, b| a.app_timestamp.total_cmp(&b.app_timestamp));
        self.magn.sort_by(|a, b| a.app_timestamp.total_cmp(&b.app_timestamp));
        self.baro.sort_by(|a, b| a.app_timestamp.total_cmp(&b.app_timestamp));
        self.wifi.sort_by(|a, b| a.app_timestamp.total_cmp(&b.app_timestamp));
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseStats {
    pub records: usize,
    pub comments: usize,
    pub skipped_unknown: usize,
}

/// Parses a TSL document. See [`parse_log_with_stats`].
pub fn parse_log(bytes: &[u8], source_id: &str) -> Result<SensorLog, LogError> {
    let (log, stats) = parse_log_with_stats(bytes, source_id)?;
    if stats.skipped_unknown > 0 {
        log::warn!(
            "{source_id}: skipped {} record(s) with unknown tags",
            stats.skipped_unknown
        );
    }
    Ok(log)
}

/// Parses a TSL document and reports how many lines were skipped.
pub fn parse_log_with_stats(
    bytes: &[u8],
    source_id: &str,
) -> Result<(SensorLog, ParseStats), LogError> {
    let text = std::str::from_utf8(bytes).map_err(|e| LogError::Encoding {
        offset: e.valid_up_to(),
    })?;
    let mut log = SensorLog {
        source_id: source_id.to_owned(),
        ..SensorLog::default()
    };
    let mut stats = ParseStats::default();

    for (i, raw) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with('%') {
            stats.comments += 1;
            continue;
        }
        let fields: Vec<&str> = line.split(';').collect();
        let err = |message: String| LogError::Parse {
            line: line_no,
            message,
        };
        match fields[0] {
            tag @ ("ACCE" | "GYRO" | "MAGN") => {
                expect_fields(&fields, 7).map_err(err)?;
                let sample = MotionSample {
                    app_timestamp: timestamp(fields[1]).map_err(err)?,
                    sensor_timestamp: real(fields[2]).map_err(err)?,
                    values: [
                        real(fields[3]).map_err(err)?,
                        real(fields[4]).map_err(err)?,
                        real(fields[5]).map_err(err)?,
                    ],
                    accuracy: integer(fields[6]).map_err(err)?,
                };
                match tag {
                    "ACCE" => log.accel.push(sample),
                    "GYRO" => log.gyro.push(sample),
                    _ => log.magn.push(sample),
                }
            }
            "PRES" => {
                expect_fields(&fields, 5).map_err(err)?;
                log.baro.push(PressureSample {
                    app_timestamp: timestamp(fields[1]).map_err(err)?,
                    sensor_timestamp: real(fields[2]).map_err(err)?,
                    hpa: real(fields[3]).map_err(err)?,
                    accuracy: integer(fields[4]).map_err(err)?,
                });
            }
            "WIFI" => {
                if fields.len() < 7 {
                    return Err(err(format!(
                        "WIFI record needs at least 7 fields, found {}",
                        fields.len()
                    )));
                }
                let n = fields.len();
                // the SSID is the only free-text field, so it absorbs any extra `;`
                let ssid = fields[3..n - 3].join(";");
                let bssid: Bssid = fields[n - 3].parse().map_err(err)?;
                let frequency: u32 = fields[n - 2]
                    .parse()
                    .map_err(|_| err(format!("bad frequency {:?}", fields[n - 2])))?;
                let rssi: i32 = integer(fields[n - 1]).map_err(err)?;
                if !(-120..=0).contains(&rssi) {
                    return Err(err(format!("rssi {rssi} outside [-120, 0] dBm")));
                }
                log.wifi.push(WifiObservation {
                    app_timestamp: timestamp(fields[1]).map_err(err)?,
                    sensor_timestamp: real(fields[2]).map_err(err)?,
                    ssid,
                    bssid,
                    frequency,
                    rssi,
                });
            }
            _ => {
                stats.skipped_unknown += 1;
                continue;
            }
        }
        stats.records += 1;
    }

    log.sort_streams();
    Ok((log, stats))
}

fn expect_fields(fields: &[&str], n: usize) -> Result<(), String> {
    if fields.len() == n {
        Ok(())
    } else {
        Err(format!(
            "{} record needs {n} fields, found {}",
            fields[0],
            fields.len()
        ))
    }
}

fn real(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("bad number {s:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite number {s:?}"))
    }
}

fn timestamp(s: &str) -> Result<f64, String> {
    let v = real(s)?;
    if v < 0.0 {
        return Err(format!("negative timestamp {s:?}"));
    }
    Ok(v)
}

fn integer(s: &str) -> Result<i32, String> {
    s.parse().map_err(|_| format!("bad integer {s:?}"))
}

/// Renders a log as TSL text. Streams are written grouped by kind.
pub fn serialize_log(log: &SensorLog) -> Result<String, LogError> {
    let mut out = String::new();
    let id = log.source_id.replace(['\n', '\r'], " ");
    let _ = writeln!(out, "% trackforge sensor log: {id}");
    for (tag, stream) in [("ACCE", &log.accel), ("GYRO", &log.gyro), ("MAGN", &log.magn)] {
        for s in stream {
            let _ = writeln!(
                out,
                "{tag};{};{};{};{};{};{}",
                s.app_timestamp, s.sensor_timestamp, s.values[0], s.values[1], s.values[2], s.accuracy
            );
        }
    }
    for s in &log.baro {
        let _ = writeln!(
            out,
            "PRES;{};{};{};{}",
            s.app_timestamp, s.sensor_timestamp, s.hpa, s.accuracy
        );
    }
    for w in &log.wifi {
        if w.ssid.contains(['\n', '\r']) {
            return Err(LogError::Unrepresentable(format!(
                "ssid {:?} contains a line break",
                w.ssid
            )));
        }
        let _ = writeln!(
            out,
            "WIFI;{};{};{};{};{};{}",
            w.app_timestamp, w.sensor_timestamp, w.ssid, w.bssid, w.frequency, w.rssi
        );
    }
    Ok(out)
}

pub fn write_log<W: Write>(log: &SensorLog, mut dest: W) -> Result<usize, LogError> {
    let text = serialize_log(log)?;
    dest.write_all(text.as_bytes())?;
    Ok(text.len())
}

/// The per-input output document: every chain graph produced from one log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainGraphDocument {
    pub source: String,
    pub graphs: Vec<ChainGraph>,
}

/// Writes `graphs` as a JSON chain-graph document and returns the number of
/// bytes written.
pub fn write_chain_graphs<W: Write>(
    graphs: &[ChainGraph],
    source: &str,
    mut dest: W,
) -> Result<usize, LogError> {
    let doc = ChainGraphDocumentRef { source, graphs };
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    dest.write_all(&bytes)?;
    Ok(bytes.len())
}

pub fn read_chain_graphs(bytes: &[u8]) -> Result<ChainGraphDocument, LogError> {
    Ok(serde_json::from_slice(bytes)?)
}

#[derive(Serialize)]
struct ChainGraphDocumentRef<'a> {
    source: &'a str,
    graphs: &'a [ChainGraph],
}

/// Collapses a batch of observations into a `bssid -> dBm` map, keeping the
/// strongest reading when an AP appears twice.
pub fn rss_map<'a>(obs: impl IntoIterator<Item = &'a WifiObservation>) -> BTreeMap<Bssid, i32> {
    let mut map = BTreeMap::new();
    for o in obs {
        map.entry(o.bssid)
            .and_modify(|v: &mut i32| *v = (*v).max(o.rssi))
            .or_insert(o.rssi);
    }
    map
}
