//! Bundled fixture programs: buggy and patched analogs of real Go bugs, each
//! with a thread dump and a run configuration.

use crate::config::parse_config;
use crate::detect::{FindingKind, Mechanism};
use crate::exec::ExecConfig;
use crate::ir::{parse_program, Program};
use crate::threads::{parse_thread_dump, ThreadRecord};

#[derive(Clone, Copy, Debug)]
pub struct Fixture {
    pub name: &'static str,
    pub buggy: &'static str,
    pub patched: &'static str,
    pub dump: &'static str,
    pub config: &'static str,
    /// The finding the buggy variant must produce.
    pub expected: (FindingKind, Mechanism),
    /// Other findings the buggy variant is allowed to produce.
    pub also: &'static [(FindingKind, Mechanism)],
}

macro_rules! fixture {
    ($name:literal, $expected:expr, $also:expr) => {
        Fixture {
            name: $name,
            buggy: include_str!(concat!("../corpus/", $name, ".pir")),
            patched: include_str!(concat!("../corpus/", $name, ".patched.pir")),
            dump: include_str!(concat!("../corpus/", $name, ".tdump")),
            config: include_str!(concat!("../corpus/", $name, ".cfg")),
            expected: $expected,
            also: $also,
        }
    };
}

use FindingKind as K;
use Mechanism as M;

pub const FIXTURES: [Fixture; 8] = [
    fixture!("kubectl-nil", (K::NilDerefSymbolic, M::AnalyzerLoad), &[]),
    fixture!(
        "kubelet-nil",
        (K::NilDerefConcrete, M::AnalyzerLoad),
        &[(K::PanicReachable, M::PanicReachAst)]
    ),
    fixture!(
        "geth-nil",
        (K::NilDerefSymbolic, M::AnalyzerLoad),
        &[(K::NilWriteConcrete, M::AnalyzerStore)]
    ),
    fixture!("evm-gascost", (K::IntOverflow, M::AnalyzerIntMult), &[]),
    fixture!("coredns-oob", (K::PanicReachable, M::PanicReachAst), &[]),
    fixture!("goprotobuf-oob", (K::PanicReachable, M::PanicReachAst), &[]),
    fixture!("preempt-div", (K::DivByZero, M::AnalyzerDiv), &[]),
    fixture!("freed-frame", (K::FreedFrameAccess, M::AnalyzerFrame), &[]),
];

pub fn fixture(name: &str) -> Option<&'static Fixture> {
    FIXTURES.iter().find(|f| f.name == name)
}

impl Fixture {
    pub fn program(&self, patched: bool) -> Program {
        let src = if patched { self.patched } else { self.buggy };
        parse_program(src).unwrap_or_else(|e| panic!("corpus fixture {}: {e}", self.name))
    }

    pub fn threads(&self) -> Vec<ThreadRecord> {
        parse_thread_dump(self.dump).unwrap_or_else(|e| panic!("corpus dump {}: {e}", self.name))
    }

    pub fn exec_config(&self) -> ExecConfig {
        parse_config(self.config, ExecConfig::default())
            .unwrap_or_else(|e| panic!("corpus config {}: {e}", self.name))
    }

    pub fn allowed(&self) -> impl Iterator<Item = (FindingKind, Mechanism)> + '_ {
        std::iter::once(self.expected).chain(self.also.iter().copied())
    }
}
