#!/usr/bin/env python3

import os
import sys
import argparse

from jinja2 import Environment, FileSystemLoader
from lib import load_json

TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'templates')


def main(args):
    """Render report.html from a saved report.json.
    """
    parser = argparse.ArgumentParser(description='Create a report HTML page')
    parser.add_argument('report',
                        type=str,
                        help='report.json written by zdshape run')
    parser.add_argument('outfile',
                        type=str,
                        help='Output report HTML file')
    parser.add_argument('--template',
                        type=str,
                        default='report.html.jinja2',
                        help='Template file name inside util/templates')
    args = parser.parse_args(args[1:])
    render_report(load_json(args.report), args.outfile, args.template)


def render_report(report, outfile, template='report.html.jinja2'):
    """Render a run report to HTML.

    Args:
        report (dict): the report written to report.json
        outfile (str): HTML path
        template (str): template name inside util/templates
    """
    env = Environment(loader=FileSystemLoader(TEMPLATE_DIR), autoescape=True)
    env.filters['num'] = format_number
    res = env.get_template(template).render(report=report,
                                            class_map=class_map,
                                            rows=spring_rows(report))
    with open(outfile, 'w') as f:
        f.write(res)


def format_number(value, digits=4):
    """Format a number for the page; None shows as a dash."""
    if value is None:
        return '-'
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, (int, float)):
        return f'{value:.{digits}g}'
    return str(value)


def spring_rows(report):
    """One table row per fitted spring order."""
    rows = []
    validation = report.get('validation', {})
    for key, fit in sorted(report.get('springs', {}).items(), key=lambda kv: kv[1]['n']):
        entry = validation.get(key, {})
        orbit = entry.get('orbit', {})
        loop = entry.get('closed_loop', {})
        fault = entry.get('fault') or loop.get('fault')
        rows.append({
            'n': fit['n'],
            'mismatch': fit['mismatch'],
            'orbital_deviation': orbit.get('orbital_deviation'),
            'relative_position_error': orbit.get('relative_position_error'),
            'closed_loop': loop.get('label'),
            'fault': (fault or {}).get('reason'),
            'level': 'ERROR' if fault else 'PASS',
        })
    return rows


# CSS classes for each level
class_map = {
    'PASS': 'table-success',
    'INFO': 'table-info',
    'WARN': 'table-warning',
    'ERROR': 'table-danger'
}


if __name__ == '__main__':
    main(sys.argv)
