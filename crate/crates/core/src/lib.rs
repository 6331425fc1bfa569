pub mod codebrowse;
pub mod envprep;
pub mod guestvm;
pub mod kdbg;
pub mod profile;
pub mod sessionrunner;
pub mod toolserver;
pub mod trace;
pub mod verdict;

mod util;
