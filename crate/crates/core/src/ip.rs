//! IPv4 addresses as 32-bit matrix indices.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// An IPv4 address used directly as a row or column index of a traffic matrix.
///
/// The numeric value is the address in network byte order read as a big-endian
/// integer, so `1.2.3.4` is `0x01020304`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IpAddr32(pub u32);

impl IpAddr32 {
    pub const fn new(value: u32) -> Self {
        Self(value)
    }

    pub const fn value(self) -> u32 {
        self.0
    }
}

impl From<u32> for IpAddr32 {
    fn from(v: u32) -> Self {
        Self(v)
    }
}

impl From<Ipv4Addr> for IpAddr32 {
    fn from(a: Ipv4Addr) -> Self {
        Self(u32::from(a))
    }
}

impl From<IpAddr32> for Ipv4Addr {
    fn from(a: IpAddr32) -> Self {
        Ipv4Addr::from(a.0)
    }
}

impl fmt::Display for IpAddr32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&Ipv4Addr::from(self.0), f)
    }
}

impl FromStr for IpAddr32 {
    type Err = std::net::AddrParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim().parse::<Ipv4Addr>().map(Self::from)
    }
}

/// One observed request: a source address talking to a destination address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IpPair {
    pub src: IpAddr32,
    pub dst: IpAddr32,
}

impl IpPair {
    pub fn new(src: impl Into<IpAddr32>, dst: impl Into<IpAddr32>) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
        }
    }

    /// Sort key packing `(src, dst)` into one word; ordering matches the tuple order.
    #[inline]
    pub(crate) fn key(self) -> u64 {
        (u64::from(self.src.0) << 32) | u64::from(self.dst.0)
    }
}
