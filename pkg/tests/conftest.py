import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

SMALL_SPECS = [
    "Exciton,L=2",
    "Exciton,L=4",
    "Hubbard,n_sites=6,n_fermions=3",
    "Hubbard,n_sites=8,n_fermions=4,U=4,ranpot=1,seed=1",
    "SpinChainXXZ,n_sites=10,n_up=5",
    "SpinChainXXZ,n_sites=12,n_up=6,anisotropy=0.5",
    "TopIns,Lx=4,Ly=3,Lz=5",
    "TopIns,Lx=10,Ly=10,Lz=10",
    "DiagEquidistant,D=1000",
    "Tridiagonal1D,D=500",
    "Tridiagonal1D,D=500,periodic=1",
]


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
