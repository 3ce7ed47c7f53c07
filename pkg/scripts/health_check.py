#!/usr/bin/env python
"""
Run Check Script for the FSI laboratory
Verifies the checksums and monitor verdicts recorded in a run directory's manifest.
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.persistence import MANIFEST_FILE, verify_manifest

def check_run(run_dir, verbose=False):
    """
    Check one run directory.

    Args:
        run_dir (str): Directory holding manifest.json
        verbose (bool): Whether to print detailed output

    Returns:
        bool: True if every file matches its checksum, every monitor passed
        and the run exited with code 0
    """
    manifest_path = Path(run_dir) / MANIFEST_FILE
    if not manifest_path.is_file():
        if verbose:
            print(f"Run check: FAILED - no manifest in {run_dir}")
        return False

    mismatched = verify_manifest(manifest_path)
    with manifest_path.open(encoding="utf-8") as f:
        manifest = json.load(f)
    failed_monitors = [name for name, ok in manifest.get("monitors", {}).items() if not ok]
    exit_code = manifest.get("details", {}).get("exit_code", 0)

    if verbose:
        print(f"Command: {manifest.get('command')} (config {manifest.get('config_hash', '')[:12]})")
        print(f"Files: {len(manifest.get('files', []))}, exit code: {exit_code}")
        for name, seconds in manifest.get("timings", {}).items():
            print(f"  {name}: {seconds:.2f}s")

    if not mismatched and not failed_monitors and exit_code == 0:
        if verbose:
            print("Run check: PASSED")
        return True
    if verbose:
        print("Run check: FAILED")
        if mismatched:
            print(f"Checksum mismatch: {', '.join(mismatched)}")
        if failed_monitors:
            print(f"Failed monitors: {', '.join(failed_monitors)}")
    return False

def main():
    parser = argparse.ArgumentParser(description='Verify a run directory of the FSI laboratory')
    parser.add_argument('run_dirs', nargs='+', help='Run directories to check')
    parser.add_argument('--verbose', action='store_true', help='Print detailed output')
    args = parser.parse_args()

    results = [check_run(d, args.verbose) for d in args.run_dirs]

    if all(results):
        sys.exit(0)  # Success exit code
    else:
        sys.exit(1)  # Error exit code

if __name__ == '__main__':
    main()
