# relaxed-bubbles/run_demo.py
"""
Demo script running every sample scenario through the simulator
"""

import os
import sys
import json

current_dir = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, current_dir)

try:
    from src.main import BubbleSimulator
    from src.cli_io import read_report
except ImportError as e:
    print(f"Import error: {e}")
    sys.exit(1)

# cheapest first; the pair runs take longest
SAMPLE_RUNS = [
    'rp_expansion.json',
    'rp_oscillation.json',
    'basis_pair.json',
    'viscous_single.json',
    'ale_triple.json',
    'inviscid_pair.json',
    'inviscid_collision.json',
    'viscous_pair.json',
]


def run_demo():
    print("\n" + "=" * 60)
    print("RELAXED BUBBLES - DEMONSTRATION")
    print("=" * 60 + "\n")

    simulator = BubbleSimulator(verbose=True)

    samples_dir = os.path.join(current_dir, "samples")
    missing = [name for name in SAMPLE_RUNS if not os.path.exists(os.path.join(samples_dir, name))]
    if missing:
        print("Creating sample run files...")
        from samples.create_samples import create_sample_files
        create_sample_files(samples_dir)

    output_root = os.path.join(current_dir, "output")
    results = []
    for name in SAMPLE_RUNS:
        print("-" * 60)
        print(f"Run file: {name}")
        print("-" * 60)
        out_dir = os.path.join(output_root, os.path.splitext(name)[0])
        result = simulator.run_file(os.path.join(samples_dir, name), out_dir)
        results.append(result)

        print(f"Status: {result['status']} (exit {result['exit_code']})")
        if result.get('events'):
            print(f"Events: {', '.join(result['events'])}")
        if 'error' in result:
            print(f"Error: {result['error']}")
        elif 'report' in result.get('outputs', {}):
            report = read_report(result['outputs']['report'])
            energy = report.get('energy')
            if energy:
                print(f"E0 = {energy['E0']:.6g}, dissipated = {energy['final_dissipation']:.6g}, "
                      f"min slack = {energy['min_slack']:.3g}")
            if 'strong_form_residual' in report:
                print(f"Strong-form residual: {report['strong_form_residual']:.3g}")
            if 'gram_min_eigenvalue' in report:
                print(f"Gram: {len(report['labels'])} fields, "
                      f"min eigenvalue {report['gram_min_eigenvalue']:.6g}")
            if 'piola' in report:
                print(f"ALE residuals: piola {report['piola']:.3g}, "
                      f"divergence {report['divergence']:.3g}")
        print(f"Run Time: {result.get('runTime', 0.0):.2f} seconds\n")

    print("=" * 60)
    print("DEMO SUMMARY")
    print("=" * 60)
    stats = simulator.get_statistics()
    print(f"\n  Completed runs: {stats['runs']}")
    print(f"  Failed runs: {stats['errors']}")
    print(f"  Average run time: {stats['avg_run_time']:.2f} seconds")
    for tag, count in sorted(stats['events'].items()):
        print(f"  {tag} events: {count}")

    summary_file = os.path.join(output_root, "demo_summary.json")
    os.makedirs(output_root, exist_ok=True)
    with open(summary_file, 'w', encoding='utf-8') as f:
        json.dump([{k: v for k, v in r.items() if k != 'runTime'} for r in results], f, indent=2)
    print(f"\nSummary saved to: {summary_file}")


if __name__ == "__main__":
    run_demo()
