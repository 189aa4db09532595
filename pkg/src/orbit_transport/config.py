"""Application configuration using Pydantic settings.

Tolerances follow one policy: identities that only rearrange the same
addends are compared at `metric_tol`, identities passing through an LP or
an eigen-solver at `solver_tol`.
"""

from pathlib import Path

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Paths
    project_root: Path = Path(__file__).resolve().parent.parent.parent
    data_dir: Path = project_root / "data"
    db_path: Path = data_dir / "orbit_transport.db"

    # Database
    db_url: str = ""

    # Groups
    group_closure_cap: int = 10_080

    # Tolerances
    metric_tol: float = 1e-12
    probability_tol: float = 1e-12
    marginal_tol: float = 1e-10
    solver_tol: float = 1e-9
    ollivier_tol: float = 1e-8
    cd_quotient_tol: float = 1e-7
    kernel_floor: float = -1e-9

    # Transport
    default_p: float = 2.0
    cyclical_budget: int = 1_000_000

    # Discrete transport flow solver
    flow_grid: int = 16
    flow_tol: float = 1e-8
    flow_ftol: float = 1e-12
    flow_max_iter: int = 500
    flow_mollifier: float = 1e-9
    flow_isometry_rtol: float = 1e-3

    # Randomized verification suites
    default_trials: int = 50
    default_seed: int = 0
    max_points: int = 12
    max_group_order: int = 24

    model_config = {"env_prefix": "ORBIT_"}

    def model_post_init(self, __context):
        import tempfile
        try:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            test_file = self.data_dir / ".write_test"
            test_file.touch()
            test_file.unlink()
        except (PermissionError, OSError):
            self.data_dir = Path(tempfile.gettempdir())
            self.data_dir.mkdir(parents=True, exist_ok=True)
            self.db_path = self.data_dir / "orbit_transport.db"
        if not self.db_url:
            self.db_url = f"sqlite:///{self.db_path}"


settings = Settings()
