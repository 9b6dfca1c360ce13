"""Trajectory ingestion and geometric preprocessing."""

from .geodesy import (
    GeoPoint,
    IlsFrame,
    IlsGeometry,
    build_ils_frame,
    ecef_to_wgs84,
    ils_to_ecef,
    project_to_ils,
    wgs84_to_ecef,
)
from .kalman import KalmanParams, kalman_em, smoothed_velocity
from .tracks import (
    RawTrack,
    SchemaError,
    changi_like_geometry,
    estimate_descent_rate,
    prepare_tracks,
    read_geometry,
    read_tracks,
    simulate_tracks,
    write_tracks_csv,
    write_tracks_jsonl,
)
from .transforms import (
    CylindricalCloud,
    PoleConfig,
    PoleModel,
    Scalers,
    canonical_polar,
    fit_pole,
    from_cylindrical,
    to_cylindrical,
)
