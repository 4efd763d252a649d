use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident($inner:ty)) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// Citizen identifier; assigned in increasing order, never reused.
    CitizenId(u64)
);
id_type!(
    /// Family identifier; assigned in increasing order, never reused.
    FamilyId(u64)
);
id_type!(
    /// Index into the run's firm table.
    FirmId(usize)
);
id_type!(
    /// Index into the run's housing stock.
    HouseId(usize)
);
