import * as fs from 'node:fs'
import * as path from 'node:path'
import * as jpeg from 'jpeg-js'
import { PNG } from 'pngjs'

export interface DecodedImage {
  width: number
  height: number
  // row-major RGB triples normalized to [0, 1]
  rgb: Float64Array
}

export function decodeImage(filePath: string): DecodedImage {
  const ext = path.extname(filePath).toLowerCase()
  const data = fs.readFileSync(filePath)
  if (ext === '.png') {
    const png = PNG.sync.read(data)
    return fromRgba(png.width, png.height, png.data)
  }
  if (ext === '.jpg' || ext === '.jpeg') {
    const img = jpeg.decode(data, { useTArray: true, maxMemoryUsageInMB: 64 })
    return fromRgba(img.width, img.height, img.data)
  }
  throw new Error(`unsupported image extension '${ext}'`)
}

function fromRgba(width: number, height: number, rgba: Uint8Array | Buffer): DecodedImage {
  const rgb = new Float64Array(width * height * 3)
  for (let p = 0; p < width * height; p++) {
    rgb[p * 3] = rgba[p * 4] / 255
    rgb[p * 3 + 1] = rgba[p * 4 + 1] / 255
    rgb[p * 3 + 2] = rgba[p * 4 + 2] / 255
  }
  return { width, height, rgb }
}
