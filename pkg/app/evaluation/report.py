import csv
import json
import os
from flask import render_template


def _write(path, text):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(text)
    return path


def write_metric_report(report, out_dir, model='octmorph'):
    """metrics.txt, metrics.json and the one-row metrics.csv."""
    _write(os.path.join(out_dir, 'metrics.txt'),
           render_template('reports/metrics.txt', report=report))
    _write(os.path.join(out_dir, 'metrics.json'),
           json.dumps(report.to_dict(), indent=2, sort_keys=True) + '\n')
    path = os.path.join(out_dir, 'metrics.csv')
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(report.csv_header())
        writer.writerow(report.csv_row(model))
    return path


def write_cluster_report(report, domains, out_dir):
    _write(os.path.join(out_dir, 'cluster.json'),
           json.dumps(dict(report, domains=list(domains)), indent=2,
                      sort_keys=True) + '\n')
    return _write(os.path.join(out_dir, 'cluster.txt'),
                  render_template('reports/cluster.txt', report=report,
                                  domains=domains))
