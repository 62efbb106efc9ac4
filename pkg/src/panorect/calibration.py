"""Recorded resampling quality floors.

Produced by demos/calibrate_thresholds.py (seeded protocol: 10 synthetic
panoramas at 512x256 for the projection round trip; 20 panorama/tilt
pairs within +/-60 deg, band |latitude| < 60 deg, for LUT recovery).
Tests assert measured PSNR >= floor - PSNR_TOLERANCE_DB. Re-run the
script and update these if the resampling stack changes intentionally.
"""

# worst erp -> cubemap(128) -> erp PSNR over the calibration images
ERP_CUBE_ROUNDTRIP_PSNR_DB = 35.0

# worst ground-truth-LUT rectification PSNR over the calibration cases
LUT_RECOVERY_PSNR_DB = 76.7

# same recovery through the 8-bit toy-scale (128x64) PNG pipeline that
# the rectify command reads and writes
RECTIFY_PNG_PSNR_DB = 51.9

PSNR_TOLERANCE_DB = 0.5

# latitude band used for rectification PSNR (pole caps excluded)
RECOVERY_BAND_DEG = 60.0
