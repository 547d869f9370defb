//! CTAP status codes used by this authenticator.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Status {
    Success = 0x00,
    InvalidCommand = 0x01,
    InvalidParameter = 0x02,
    InvalidLength = 0x03,
    CborUnexpectedType = 0x11,
    InvalidCbor = 0x12,
    MissingParameter = 0x14,
    CredentialExcluded = 0x19,
    UnsupportedAlgorithm = 0x26,
    OperationDenied = 0x27,
    KeyStoreFull = 0x28,
    UnsupportedOption = 0x2B,
    InvalidOption = 0x2C,
    NoCredentials = 0x2E,
    NotAllowed = 0x30,
    PinInvalid = 0x31,
    PinBlocked = 0x32,
    PinAuthInvalid = 0x33,
    PinAuthBlocked = 0x34,
    PinNotSet = 0x35,
    PinRequired = 0x36,
    PinPolicyViolation = 0x37,
    Other = 0x7F,
}

impl Status {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Status> {
        use Status::*;
        const ALL: [Status; 23] = [
            Success,
            InvalidCommand,
            InvalidParameter,
            InvalidLength,
            CborUnexpectedType,
            InvalidCbor,
            MissingParameter,
            CredentialExcluded,
            UnsupportedAlgorithm,
            OperationDenied,
            KeyStoreFull,
            UnsupportedOption,
            InvalidOption,
            NoCredentials,
            NotAllowed,
            PinInvalid,
            PinBlocked,
            PinAuthInvalid,
            PinAuthBlocked,
            PinNotSet,
            PinRequired,
            PinPolicyViolation,
            Other,
        ];
        ALL.into_iter().find(|s| s.code() == code)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} (0x{:02X})", self, self.code())
    }
}

impl std::error::Error for Status {}
