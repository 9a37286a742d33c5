/**
 * Auto mode: given a results directory produced by `accelshape run-all --out`,
 * derive one grouped-bar figure per scenario found in results.csv.
 */
import { existsSync } from 'fs';
import { join } from 'path';

import { FigureSpec, SpecError } from './figure.js';
import { readResultsCsv } from './schema.js';

export function figureFilename(scenarioName: string): string {
  return scenarioName.replace(/\//g, '__') + '.svg';
}

export function autoSpecs(resultsDir: string, outDir: string): FigureSpec[] {
  const resultsPath = join(resultsDir, 'results.csv');
  if (!existsSync(resultsPath)) {
    throw new SpecError(`no results.csv in ${resultsDir}`);
  }
  const rows = readResultsCsv(resultsPath);
  const seen = new Set<string>();
  const specs: FigureSpec[] = [];
  for (const row of rows) {
    if (seen.has(row.scenario)) {
      continue;
    }
    seen.add(row.scenario);
    specs.push({
      kind: 'GroupedBars',
      inputs: [resultsPath],
      title: row.scenario,
      output_path: join(outDir, figureFilename(row.scenario)),
      scenarios: [row.scenario],
    });
  }
  return specs;
}
