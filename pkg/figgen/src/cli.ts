#!/usr/bin/env node
/**
 * figgen --spec <file>            render the figures described in a JSON spec
 * figgen --auto <results-dir>     one grouped-bar figure per scenario in results.csv
 */
import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { autoSpecs } from './auto.js';
import { FigureSpec, SpecError, loadSpecFile } from './figure.js';
import { render } from './render.js';
import { SchemaError } from './schema.js';

export function main(argv: string[]): number {
  const args = yargs(argv)
    .usage('$0 --spec <file> | $0 --auto <results-dir>')
    .option('spec', { type: 'string', describe: 'JSON file with one figure spec or a list of them' })
    .option('auto', { type: 'string', describe: 'results directory from `accelshape run-all --out`' })
    .option('out', { type: 'string', default: 'figures', describe: 'output directory for --auto' })
    .conflicts('spec', 'auto')
    .help()
    .parseSync();

  try {
    let specs: FigureSpec[];
    if (args.spec) {
      specs = loadSpecFile(args.spec);
    } else if (args.auto) {
      specs = autoSpecs(args.auto, args.out);
    } else {
      console.error('give either --spec <file> or --auto <results-dir>');
      return 2;
    }
    for (const spec of specs) {
      const meta = render(spec);
      console.log(`wrote ${meta.output_path} (${meta.kind}, ${meta.seriesCount} series, ${meta.pointCount} points)`);
    }
    console.log(`${specs.length} figure(s) rendered`);
    return 0;
  } catch (exc) {
    if (exc instanceof SchemaError || exc instanceof SpecError) {
      console.error(exc.message);
      return 2;
    }
    throw exc;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].split('/').pop() ?? '');
if (invokedDirectly) {
  process.exit(main(hideBin(process.argv)));
}
