/**
 * Figure specifications: what to draw, from which CSVs, into which file.
 */
import { existsSync, readFileSync } from 'fs';

export const FIGURE_KINDS = ['GroupedBars', 'ProfileCurve', 'TimeSeries'] as const;
export type FigureKind = (typeof FIGURE_KINDS)[number];

export interface FigureSpec {
  kind: FigureKind;
  /** CSV inputs; results-table files for bars/curves, series files for time series. */
  inputs: string[];
  title: string;
  output_path: string;
  /** Optional filter: keep only these scenario names (default: all rows). */
  scenarios?: string[];
}

export class SpecError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'SpecError';
  }
}

function asSpec(obj: unknown, where: string): FigureSpec {
  if (typeof obj !== 'object' || obj === null || Array.isArray(obj)) {
    throw new SpecError(`${where}: expected an object`);
  }
  const rec = obj as Record<string, unknown>;
  const allowed = new Set(['kind', 'inputs', 'title', 'output_path', 'scenarios']);
  for (const key of Object.keys(rec)) {
    if (!allowed.has(key)) {
      throw new SpecError(`${where}.${key}: unknown key`);
    }
  }
  const kind = rec.kind;
  if (typeof kind !== 'string' || !FIGURE_KINDS.includes(kind as FigureKind)) {
    throw new SpecError(`${where}.kind: expected one of ${FIGURE_KINDS.join(', ')}`);
  }
  const inputs = rec.inputs;
  if (!Array.isArray(inputs) || inputs.length === 0 || !inputs.every((p) => typeof p === 'string')) {
    throw new SpecError(`${where}.inputs: expected a non-empty list of CSV paths`);
  }
  if (typeof rec.title !== 'string' || rec.title === '') {
    throw new SpecError(`${where}.title: required`);
  }
  if (typeof rec.output_path !== 'string' || rec.output_path === '') {
    throw new SpecError(`${where}.output_path: required`);
  }
  let scenarios: string[] | undefined;
  if (rec.scenarios !== undefined) {
    if (!Array.isArray(rec.scenarios) || !rec.scenarios.every((s) => typeof s === 'string')) {
      throw new SpecError(`${where}.scenarios: expected a list of scenario names`);
    }
    scenarios = rec.scenarios as string[];
  }
  for (const input of inputs as string[]) {
    if (!existsSync(input)) {
      throw new SpecError(`${where}.inputs: no such file: ${input}`);
    }
  }
  return {
    kind: kind as FigureKind,
    inputs: inputs as string[],
    title: rec.title,
    output_path: rec.output_path,
    scenarios,
  };
}

/** Load one spec or a list of specs from a JSON file. */
export function loadSpecFile(path: string): FigureSpec[] {
  if (!existsSync(path)) {
    throw new SpecError(`no such spec file: ${path}`);
  }
  let data: unknown;
  try {
    data = JSON.parse(readFileSync(path, 'utf8'));
  } catch (exc) {
    throw new SpecError(`${path}: invalid JSON: ${(exc as Error).message}`);
  }
  if (Array.isArray(data)) {
    return data.map((obj, i) => asSpec(obj, `${path}[${i}]`));
  }
  return [asSpec(data, path)];
}
