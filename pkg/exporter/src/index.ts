export { Backbone, BackboneError, loadBackbone, toyBackbone } from './backbone'
export { ExportError, ExportSummary, ImageFailure, runExport } from './export'
export { ImageDecodeError, RgbaImage, decodeImage, resizeBilinear } from './image'
export { ExportManifest, ManifestError, parseManifest, readManifest, scanImageFolder } from './manifest'
export {
  ClassRecords,
  FeatureStore,
  StoreFormatError,
  decodeStore,
  encodeStore,
  readStore,
  writeStore,
} from './store'
