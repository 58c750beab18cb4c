# relaxed-bubbles/samples/create_samples.py
"""
Create sample run files - one per scenario, written next to this script
"""

import os
import json

FOUR_PI = 12.566370614359172


def bubble(center, radius=1.0, c=FOUR_PI, rdot=0.0, xdot=(0.0, 0.0, 0.0)):
    return {'center': list(center), 'radius': radius, 'pressure_constant': c,
            'rdot': rdot, 'xdot': list(xdot)}


SAMPLES = {
    # unit bubble at p = 1 in vacuum; expands and slows under viscosity
    'rp_expansion.json': {
        'scenario': 'rp',
        'bubbles': [bubble([0, 0, 0])],
        'params': {'T': 2.0, 'nu': 0.1},
    },
    # oscillation about r* = 1 with far-field pressure 1
    'rp_oscillation.json': {
        'scenario': 'rp',
        'bubbles': [bubble([0, 0, 0], radius=1.2)],
        'params': {'T': 5.0, 'p_inf': 1.0},
    },
    'inviscid_pair.json': {
        'scenario': 'inviscid',
        'bubbles': [bubble([-2.5, 0, 0], xdot=(0.2, 0, 0)),
                    bubble([2.5, 0, 0], xdot=(-0.2, 0, 0))],
        'params': {'T': 1.0, 'L': 3},
    },
    'inviscid_collision.json': {
        'scenario': 'inviscid',
        'bubbles': [bubble([-1.5, 0, 0], xdot=(3.0, 0, 0)),
                    bubble([1.5, 0, 0], xdot=(-3.0, 0, 0))],
        'params': {'T': 1.0, 'L': 3, 'collision_threshold': 0.5},
    },
    'viscous_single.json': {
        'scenario': 'viscous',
        'bubbles': [bubble([0, 0, 0], rdot=0.5)],
        'params': {'T': 0.02, 'h': 0.002, 'nu': 0.1, 'L': 1, 'fields': 'monopole',
                   'convection': 'boundary'},
    },
    'viscous_pair.json': {
        'scenario': 'viscous',
        'bubbles': [bubble([0, 0, -2.5], c=1.0, rdot=0.1),
                    bubble([0, 0, 2.5], radius=0.8, c=2.0, xdot=(0, 0, -0.1))],
        'params': {'T': 0.02, 'h': 0.005, 'nu': 0.05, 'L': 2},
    },
    'basis_pair.json': {
        'scenario': 'basis',
        'bubbles': [bubble([0, 0, -2.5]), bubble([0, 0, 2.5], radius=0.8)],
        'params': {'L': 4},
    },
    'ale_triple.json': {
        'scenario': 'ale-verify',
        'bubbles': [bubble([-3, 0, 0], c=1.0, rdot=0.1, xdot=(0.2, 0, 0)),
                    bubble([3, 0, 0], radius=0.8, c=1.0, rdot=-0.1, xdot=(-0.1, 0.1, 0)),
                    bubble([0, 3.5, 0], radius=0.9, c=1.0, rdot=0.05, xdot=(0, 0, 0.2))],
        'params': {'T': 0.5, 't': 0.3, 'samples': 4},
    },
}


def create_sample_files(directory=None):
    """Write every sample run file; returns the written paths"""
    directory = directory or os.path.dirname(os.path.abspath(__file__))
    os.makedirs(directory, exist_ok=True)
    print(f"Creating sample run files in {directory}...")

    paths = []
    for name, run in SAMPLES.items():
        path = os.path.join(directory, name)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(run, f, indent=2)
            f.write('\n')
        print(f"  {name} ({run['scenario']})")
        paths.append(path)

    print(f"\nCreated {len(paths)} sample run files.")
    return paths


if __name__ == "__main__":
    create_sample_files()
