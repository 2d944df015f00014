#!/usr/bin/env node
import { extract } from './extract'

function usage(): never {
  console.error(
    'usage: extractor extract --model ID --images DIR --mapping FILE --out FILE [--batch N]')
  process.exit(2)
}

function parseArgs(argv: string[]): Record<string, string> {
  const flags: Record<string, string> = {}
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i]
    if (!key.startsWith('--') || i + 1 >= argv.length) usage()
    flags[key.slice(2)] = argv[i + 1]
  }
  return flags
}

function main(): number {
  const argv = process.argv.slice(2)
  if (argv[0] !== 'extract') usage()
  const flags = parseArgs(argv.slice(1))
  for (const required of ['model', 'images', 'mapping', 'out']) {
    if (!(required in flags)) {
      console.error(`missing --${required}`)
      usage()
    }
  }
  try {
    const result = extract({
      model: flags.model,
      imagesRoot: flags.images,
      mappingFile: flags.mapping,
      outFile: flags.out,
      batchSize: flags.batch ? parseInt(flags.batch, 10) : undefined,
    })
    console.log(
      `wrote ${result.processed.length} records to ${flags.out}` +
      (result.skipped.length ? ` (${result.skipped.length} skipped)` : ''))
    return 0
  } catch (err) {
    console.error(`fatal: ${err instanceof Error ? err.message : err}`)
    return 1
  }
}

process.exit(main())
